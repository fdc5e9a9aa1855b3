//! Dense f64 tensors with reverse-mode differentiation over exactly the
//! primitives the training pipeline composes.
//!
//! A [`Tensor`] is plain owned data. Differentiation happens on a
//! [`Tape`]: values are registered as leaves (optionally marked as
//! parameters), operations go through tape methods that record each
//! application, and [`Tape::backward`] replays the record in strict
//! reverse append order. A tape is single-use: one forward pass, at most
//! one backward pass. There is no higher-order differentiation.
//!
//! Image-like tensors are laid out `B x C x H x W`, row-major.

mod kernels;
mod tape;

pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};

/// Dense real tensor. `grad` is populated by [`Tape::write_grad`] after a
/// backward pass; `tape_id` links the tensor to the tape node it was
/// registered under for the current pass.
#[derive(Debug, Clone, Default)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub tape_id: Option<NodeId>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], grad: None, tape_id: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None, tape_id: None })
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![], data: vec![v], grad: None, tape_id: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the values. Any previously computed grad and tape
    /// registration are stale after mutation, so both are cleared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.grad = None;
        self.tape_id = None;
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Squared Frobenius norm of the values.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(2.5);
        assert!(s.shape().is_empty());
        assert_eq!(s.numel(), 1);
    }

    #[test]
    fn data_mut_invalidates_grad() {
        let mut t = Tensor::zeros(&[2]);
        t.grad = Some(vec![1.0, 2.0]);
        t.tape_id = Some(0);
        t.data_mut()[0] = 5.0;
        assert!(t.grad.is_none());
        assert!(t.tape_id.is_none());
    }
}
