//! Operation tape for reverse-mode differentiation.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: bool },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, pad: usize },
    AvgPool2 { x: NodeId },
    BilinearUp2 { x: NodeId },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    MulScalar { x: NodeId, scale: f64 },
    ConcatChannels { a: NodeId, b: NodeId },
    Mse { a: NodeId, b: NodeId },
    Reshape { x: NodeId },
    Transpose { x: NodeId },
    MatMul { a: NodeId, b: NodeId },
    /// `x + eps * I`. `eps` is a forward-time constant: gradients pass
    /// through to `x` unchanged.
    AddScaledIdentity { x: NodeId },
    /// k x H x W channel maps tiled `copies` times into an (copies*H*W) x k
    /// basis matrix; column j is channel j flattened and repeated.
    TileChannels { x: NodeId, copies: usize },
    SelectBatch { x: NodeId, item: usize },
    StackBatch { items: Vec<NodeId> },
    /// X = A^{-1} B for symmetric positive definite A, with the Cholesky
    /// factor saved for the adjoint.
    SolveSmall { a: NodeId, b: NodeId, factor: Vec<f64> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
}

/// Append-only record of primitive applications. Single-use: build one
/// forward graph, then call [`Tape::backward`] at most once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn img_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(Error::shape(format!("expected B x C x H x W tensor, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> NodeId {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite tape value");
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { op, shape, value });
        self.nodes.len() - 1
    }

    /// Register a non-parameter leaf.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf { param: false }, t.shape().to_vec(), t.data().to_vec())
    }

    /// Register a parameter leaf and link the tensor to its node, so
    /// [`Tape::write_grad`] can deliver the gradient after backward.
    pub fn param(&mut self, t: &mut Tensor) -> NodeId {
        let id = self.push(Op::Leaf { param: true }, t.shape().to_vec(), t.data().to_vec());
        t.tape_id = Some(id);
        id
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    /// Copy a node's value out as a tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::from_vec(&self.nodes[id].shape, self.nodes[id].value.clone())
            .expect("tape node shape is consistent")
    }

    // ── Primitives ──────────────────────────────────────────────────

    /// Cross-correlation with bias. Kernel extents must be odd and `pad`
    /// must equal (K-1)/2 on both axes so spatial size is preserved.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, pad: usize) -> Result<NodeId> {
        let (bsz, c, h, wd) = img_dims(self.shape(x))?;
        let (o, wc, kh, kw) = img_dims(self.shape(w))?;
        if self.shape(b) != [o] {
            return Err(Error::shape(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                self.shape(b),
                o
            )));
        }
        if wc != c {
            return Err(Error::shape(format!(
                "conv2d input has {c} channels but kernel expects {wc}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!("conv2d kernel extents must be odd, got {kh}x{kw}")));
        }
        if pad != (kh - 1) / 2 || pad != (kw - 1) / 2 {
            return Err(Error::shape(format!(
                "conv2d padding {pad} must be (K-1)/2 for kernel {kh}x{kw}"
            )));
        }
        let y = kernels::conv2d_forward(
            self.value(x),
            (bsz, c, h, wd),
            self.value(w),
            (o, kh, kw),
            self.value(b),
            pad,
        );
        Ok(self.push(Op::Conv2d { x, w, b, pad }, vec![bsz, o, h, wd], y))
    }

    /// 2x2 mean pooling; height and width must be even.
    pub fn avgpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (bsz, c, h, w) = img_dims(self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("avgpool2 requires even extents, got {h}x{w}")));
        }
        let y = kernels::avgpool2_forward(self.value(x), bsz * c, h, w);
        Ok(self.push(Op::AvgPool2 { x }, vec![bsz, c, h / 2, w / 2], y))
    }

    /// x2 bilinear upsampling with half-pixel centers and clamped edges
    /// (see `kernels::bilinear_axis` for the exact weights).
    pub fn bilinear_up2(&mut self, x: NodeId) -> Result<NodeId> {
        let (bsz, c, h, w) = img_dims(self.shape(x))?;
        if h == 0 || w == 0 {
            return Err(Error::shape("bilinear_up2 requires non-empty planes".to_string()));
        }
        let y = kernels::bilinear_up2_forward(self.value(x), bsz * c, h, w);
        Ok(self.push(Op::BilinearUp2 { x }, vec![bsz, c, 2 * h, 2 * w], y))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Relu { x }, shape, y)
    }

    fn binary_elementwise(&self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{name}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "add")?;
        let y: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add { a, b }, shape, y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "sub")?;
        let y: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Sub { a, b }, shape, y))
    }

    pub fn mul_scalar(&mut self, x: NodeId, scale: f64) -> NodeId {
        let y: Vec<f64> = self.value(x).iter().map(|v| v * scale).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::MulScalar { x, scale }, shape, y)
    }

    /// Concatenate along the channel axis; batch and spatial extents must
    /// match. Channel order is `a` then `b`.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ba, ca, ha, wa) = img_dims(self.shape(a))?;
        let (bb, cb, hb, wb) = img_dims(self.shape(b))?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::shape(format!(
                "concat_channels: {:?} and {:?} differ outside the channel axis",
                self.shape(a),
                self.shape(b)
            )));
        }
        let plane = ha * wa;
        let mut y = Vec::with_capacity(ba * (ca + cb) * plane);
        for bi in 0..ba {
            y.extend_from_slice(&self.value(a)[bi * ca * plane..(bi + 1) * ca * plane]);
            y.extend_from_slice(&self.value(b)[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        Ok(self.push(Op::ConcatChannels { a, b }, vec![ba, ca + cb, ha, wa], y))
    }

    /// Mean squared difference, reduced to a rank-0 scalar.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "mse")?;
        let n = self.value(a).len() as f64;
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        Ok(self.push(Op::Mse { a, b }, vec![], vec![v]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape(format!(
                "reshape to {:?} changes element count {}",
                shape,
                self.value(x).len()
            )));
        }
        let y = self.value(x).to_vec();
        Ok(self.push(Op::Reshape { x }, shape.to_vec(), y))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose expects a matrix, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let y = kernels::transpose(self.value(x), m, n);
        Ok(self.push(Op::Transpose { x }, vec![n, m], y))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul: incompatible shapes {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let y = kernels::matmul(self.value(a), self.value(b), m, k, n);
        Ok(self.push(Op::MatMul { a, b }, vec![m, n], y))
    }

    /// `x + eps * I` for a square matrix. `eps` is treated as a constant
    /// of the forward pass, not differentiated.
    pub fn add_scaled_identity(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::shape(format!("add_scaled_identity expects square, got {s:?}")));
        }
        let k = s[0];
        let mut y = self.value(x).to_vec();
        for i in 0..k {
            y[i * k + i] += eps;
        }
        Ok(self.push(Op::AddScaledIdentity { x }, vec![k, k], y))
    }

    /// Build a basis matrix from k channel maps: input k x H x W, output
    /// (copies*H*W) x k where column j holds channel j flattened row-major
    /// and repeated `copies` times.
    pub fn tile_channels(&mut self, x: NodeId, copies: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!("tile_channels expects k x H x W, got {s:?}")));
        }
        let (k, h, w) = (s[0], s[1], s[2]);
        let plane = h * w;
        let n = copies * plane;
        let mut y = vec![0.0; n * k];
        let xv = self.value(x);
        for t in 0..copies {
            for p in 0..plane {
                let row = (t * plane + p) * k;
                for j in 0..k {
                    y[row + j] = xv[j * plane + p];
                }
            }
        }
        Ok(self.push(Op::TileChannels { x, copies }, vec![n, k], y))
    }

    /// Extract batch item `item` from a B x ... tensor, dropping the
    /// batch axis.
    pub fn select_batch(&mut self, x: NodeId, item: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || item >= s[0] {
            return Err(Error::shape(format!("select_batch item {item} out of {s:?}")));
        }
        let per: usize = s[1..].iter().product();
        let y = self.value(x)[item * per..(item + 1) * per].to_vec();
        Ok(self.push(Op::SelectBatch { x, item }, s[1..].to_vec(), y))
    }

    /// Stack same-shaped items into a new leading batch axis.
    pub fn stack_batch(&mut self, items: &[NodeId]) -> Result<NodeId> {
        if items.is_empty() {
            return Err(Error::shape("stack_batch of no items".to_string()));
        }
        let s0 = self.shape(items[0]).to_vec();
        for &it in items {
            if self.shape(it) != s0 {
                return Err(Error::shape(format!(
                    "stack_batch: item shape {:?} differs from {:?}",
                    self.shape(it),
                    s0
                )));
            }
        }
        let mut y = Vec::with_capacity(items.len() * self.value(items[0]).len());
        for &it in items {
            y.extend_from_slice(self.value(it));
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&s0);
        Ok(self.push(Op::StackBatch { items: items.to_vec() }, shape, y))
    }

    /// Solve `A X = B` for symmetric positive definite `A` (k x k) and a
    /// k x m right-hand side, by Cholesky factorization. The adjoint is
    /// custom: `grad_B = A^{-1} G` and `grad_A = -sym((A^{-1} G) X^T)`.
    /// `context` names the call site in factorization errors.
    pub fn solve_small(&mut self, a: NodeId, b: NodeId, context: &str) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sa[0] != sa[1] {
            return Err(Error::shape(format!("solve_small: A must be square, got {sa:?}")));
        }
        if sb.len() != 2 || sb[0] != sa[0] {
            return Err(Error::shape(format!("solve_small: A {sa:?} vs B {sb:?}")));
        }
        let (k, m) = (sb[0], sb[1]);
        if !self.value(a).iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!("solve_small({context}): non-finite matrix")));
        }
        let factor = kernels::cholesky_factor(self.value(a), k).ok_or_else(|| {
            Error::numeric(format!("solve_small({context}): factorization failed, matrix not SPD"))
        })?;
        let x = kernels::cholesky_solve(&factor, k, self.value(b), m);
        Ok(self.push(Op::SolveSmall { a, b, factor }, vec![k, m], x))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss node. Visits nodes in strict
    /// reverse append order. After it returns, every parameter leaf has a
    /// gradient (zero if the loss does not depend on it); non-parameter
    /// leaves keep whatever gradient flowed to them, if any.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss >= self.nodes.len() {
            return Err(Error::shape(format!("backward: unknown node {loss}")));
        }
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let Some(gy) = self.grads[id].take() else { continue };
            apply_adjoint(&self.nodes, id, &gy, &mut self.grads);
            self.grads[id] = Some(gy);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { param: true }) && self.grads[id].is_none() {
                self.grads[id] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    /// Gradient of a node, if one was computed by [`Tape::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Copy the gradient of the node a tensor was registered under into
    /// the tensor's `grad` field.
    pub fn write_grad(&self, t: &mut Tensor) -> Result<()> {
        let id = t
            .tape_id
            .ok_or_else(|| Error::shape("tensor was not registered on this tape".to_string()))?;
        let g = self
            .grad(id)
            .ok_or_else(|| Error::shape(format!("no gradient computed for node {id}")))?;
        t.grad = Some(g.to_vec());
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize, mut f: impl FnMut(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

/// Push `gy` at node `id` back to the node's inputs.
fn apply_adjoint(nodes: &[Node], id: NodeId, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Conv2d { x, w, b, pad } => {
            let (bsz, c, h, wd) = {
                let s = &nodes[*x].shape;
                (s[0], s[1], s[2], s[3])
            };
            let (o, kh, kw) = {
                let s = &nodes[*w].shape;
                (s[0], s[2], s[3])
            };
            let (gx, gw, gb) = kernels::conv2d_backward(
                &nodes[*x].value,
                (bsz, c, h, wd),
                &nodes[*w].value,
                (o, kh, kw),
                *pad,
                gy,
            );
            accumulate(grads, *x, gx.len(), |g| g.iter_mut().zip(&gx).for_each(|(a, v)| *a += v));
            accumulate(grads, *w, gw.len(), |g| g.iter_mut().zip(&gw).for_each(|(a, v)| *a += v));
            accumulate(grads, *b, gb.len(), |g| g.iter_mut().zip(&gb).for_each(|(a, v)| *a += v));
        }
        Op::AvgPool2 { x } => {
            let s = &nodes[*x].shape;
            let gx = kernels::avgpool2_backward(gy, s[0] * s[1], s[2], s[3]);
            accumulate(grads, *x, gx.len(), |g| g.iter_mut().zip(&gx).for_each(|(a, v)| *a += v));
        }
        Op::BilinearUp2 { x } => {
            let s = &nodes[*x].shape;
            let gx = kernels::bilinear_up2_backward(gy, s[0] * s[1], s[2], s[3]);
            accumulate(grads, *x, gx.len(), |g| g.iter_mut().zip(&gx).for_each(|(a, v)| *a += v));
        }
        Op::Relu { x } => {
            let xv = &nodes[*x].value;
            accumulate(grads, *x, xv.len(), |g| {
                for i in 0..xv.len() {
                    if xv[i] > 0.0 {
                        g[i] += gy[i];
                    }
                }
            });
        }
        Op::Add { a, b } => {
            accumulate(grads, *a, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(s, v)| *s += v));
            accumulate(grads, *b, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(s, v)| *s += v));
        }
        Op::Sub { a, b } => {
            accumulate(grads, *a, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(s, v)| *s += v));
            accumulate(grads, *b, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(s, v)| *s -= v));
        }
        Op::MulScalar { x, scale } => {
            accumulate(grads, *x, gy.len(), |g| {
                g.iter_mut().zip(gy).for_each(|(s, v)| *s += scale * v)
            });
        }
        Op::ConcatChannels { a, b } => {
            let (ba, ca, ha, wa) = {
                let s = &nodes[*a].shape;
                (s[0], s[1], s[2], s[3])
            };
            let cb = nodes[*b].shape[1];
            let plane = ha * wa;
            accumulate(grads, *a, ba * ca * plane, |g| {
                for bi in 0..ba {
                    let src = bi * (ca + cb) * plane;
                    let dst = bi * ca * plane;
                    for i in 0..ca * plane {
                        g[dst + i] += gy[src + i];
                    }
                }
            });
            accumulate(grads, *b, ba * cb * plane, |g| {
                for bi in 0..ba {
                    let src = bi * (ca + cb) * plane + ca * plane;
                    let dst = bi * cb * plane;
                    for i in 0..cb * plane {
                        g[dst + i] += gy[src + i];
                    }
                }
            });
        }
        Op::Mse { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let n = av.len() as f64;
            let g0 = gy[0];
            accumulate(grads, *a, av.len(), |g| {
                for i in 0..av.len() {
                    g[i] += g0 * 2.0 * (av[i] - bv[i]) / n;
                }
            });
            accumulate(grads, *b, bv.len(), |g| {
                for i in 0..bv.len() {
                    g[i] -= g0 * 2.0 * (av[i] - bv[i]) / n;
                }
            });
        }
        Op::Reshape { x } | Op::AddScaledIdentity { x } => {
            accumulate(grads, *x, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(s, v)| *s += v));
        }
        Op::Transpose { x } => {
            let s = &nodes[*x].shape;
            let (m, n) = (s[0], s[1]);
            // gy has shape n x m; its transpose lands on x.
            let gt = kernels::transpose(gy, n, m);
            accumulate(grads, *x, m * n, |g| g.iter_mut().zip(&gt).for_each(|(s, v)| *s += v));
        }
        Op::MatMul { a, b } => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            // grad_a = gy . b^T, grad_b = a^T . gy
            let bt = kernels::transpose(&nodes[*b].value, k, n);
            let ga = kernels::matmul(gy, &bt, m, n, k);
            let at = kernels::transpose(&nodes[*a].value, m, k);
            let gb = kernels::matmul(&at, gy, k, m, n);
            accumulate(grads, *a, m * k, |g| g.iter_mut().zip(&ga).for_each(|(s, v)| *s += v));
            accumulate(grads, *b, k * n, |g| g.iter_mut().zip(&gb).for_each(|(s, v)| *s += v));
        }
        Op::TileChannels { x, copies } => {
            let s = &nodes[*x].shape;
            let (k, plane) = (s[0], s[1] * s[2]);
            accumulate(grads, *x, k * plane, |g| {
                for t in 0..*copies {
                    for p in 0..plane {
                        let row = (t * plane + p) * k;
                        for j in 0..k {
                            g[j * plane + p] += gy[row + j];
                        }
                    }
                }
            });
        }
        Op::SelectBatch { x, item } => {
            let per = gy.len();
            let total = nodes[*x].value.len();
            accumulate(grads, *x, total, |g| {
                for i in 0..per {
                    g[item * per + i] += gy[i];
                }
            });
        }
        Op::StackBatch { items } => {
            let per = nodes[items[0]].value.len();
            for (slot, &it) in items.iter().enumerate() {
                accumulate(grads, it, per, |g| {
                    for i in 0..per {
                        g[i] += gy[slot * per + i];
                    }
                });
            }
        }
        Op::SolveSmall { a, b, factor } => {
            let (k, m) = (node.shape[0], node.shape[1]);
            // grad_B = A^{-1} G (A symmetric).
            let gb = kernels::cholesky_solve(factor, k, gy, m);
            // grad_A = -sym(grad_B . X^T); the symmetrization is exact for
            // the symmetric perturbations A is restricted to.
            let xt = kernels::transpose(&node.value, k, m);
            let gbx = kernels::matmul(&gb, &xt, k, m, k);
            accumulate(grads, *a, k * k, |g| {
                for i in 0..k {
                    for j in 0..k {
                        g[i * k + j] -= 0.5 * (gbx[i * k + j] + gbx[j * k + i]);
                    }
                }
            });
            accumulate(grads, *b, k * m, |g| g.iter_mut().zip(&gb).for_each(|(s, v)| *s += v));
        }
    }
}
