//! Reverse-mode differentiation tape.
//!
//! Operations are recorded in forward order; every node's inputs precede it,
//! so a single reverse sweep visits nodes in reverse topological order
//! exactly once. One tape per optimization run, confined to one thread.

use std::cell::RefCell;

use super::kernels::{self, SQRT_DELTA};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norm smoothing inside per-column cosine maps.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    /// x - broadcast(scalar s)
    SubBroadcast(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    /// sqrt(x + SQRT_DELTA)
    SqrtSmooth(usize),
    /// Straight-through gradient inside [lo, hi], zero outside.
    Clamp(usize, f64, f64),
    /// Border-replicate padding of a [C,H,W] tensor by `margin` pixels.
    PadReplicate { x: usize, margin: usize },
    Sum(usize),
    Mean(usize),
    AvgPool { x: usize, k: usize },
    GaussBlur { x: usize, ksize: usize, sigma: f64, same: bool },
    Conv2d { input: usize, kernel: usize, stride: usize, padding: usize },
    GridSample { input: usize, grid: usize },
    CosineSim(usize, usize),
    /// Subtract each channel's spatial mean: out[c,i,j] = x[c,i,j] - mean(x[c]).
    CenterChannels(usize),
    CosineMap { features: usize, embedding: usize },
    BilinearRead { features: usize, y: f64, x: f64 },
    RegionMean { features: usize, y0: usize, y1: usize, x0: usize, x1: usize },
    Crop3 { x: usize, off: [usize; 3], size: [usize; 3] },
    Reshape { x: usize, shape: Vec<usize> },
}

/// Recorded computation graph. Interior mutability keeps op construction
/// ergonomic (`&Tape` everywhere); not Sync, by design.
pub struct Tape {
    ops: RefCell<Vec<(Op, bool)>>,
    values: RefCell<Vec<Tensor>>,
}

/// Handle to a node on a tape. Cheap to copy; the backing value lives in
/// the tape arena.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradient table produced by [`Tape::backward`], keyed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; zeros when `v` is off every path to the loss
    /// or does not require grad.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { ops: RefCell::new(Vec::new()), values: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.ops.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, true, value)
    }

    /// Register a non-differentiable constant. Never accumulates gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, false, value)
    }

    fn push(&self, op: Op, requires_grad: bool, value: Tensor) -> Var<'_> {
        let mut ops = self.ops.borrow_mut();
        let mut values = self.values.borrow_mut();
        ops.push((op, requires_grad));
        values.push(value);
        Var { tape: self, id: ops.len() - 1 }
    }

    fn record(&self, op: Op) -> Var<'_> {
        let (requires_grad, value) = {
            let ops = self.ops.borrow();
            let values = self.values.borrow();
            let rg = op_inputs(&op).iter().any(|&i| ops[i].1);
            (rg, eval_op(&op, &values))
        };
        self.push(op, requires_grad, value)
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.values.borrow()[id].shape().to_vec()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.ops.borrow()[id].1
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// that requires grad and lies on a path to the loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        debug_assert!(std::ptr::eq(self, loss.tape), "loss from a different tape");
        let ops = self.ops.borrow();
        let values = self.values.borrow();
        if !values[loss.id].is_scalar() {
            return Err(Error::Rank {
                op: "backward",
                detail: format!("loss must be scalar, shape is {:?}", values[loss.id].shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; ops.len()];
        grads[loss.id] = Some(Tensor::new(values[loss.id].shape().to_vec(), vec![1.0]).unwrap());

        for id in (0..=loss.id).rev() {
            if !ops[id].1 {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            backprop_op(&ops[id].0, &g, &values[id], &values, &ops, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Re-execute every recorded op from the leaf values. Returns the
    /// recomputed node values; used to verify forward determinism.
    pub fn replay(&self) -> Vec<Tensor> {
        let ops = self.ops.borrow();
        let values = self.values.borrow();
        let mut fresh: Vec<Tensor> = Vec::with_capacity(ops.len());
        for (i, (op, _)) in ops.iter().enumerate() {
            let v = match op {
                Op::Leaf => values[i].clone(),
                _ => eval_op(op, &fresh),
            };
            fresh.push(v);
        }
        fresh
    }

    /// True when a replay reproduces every recorded value bit-exactly.
    pub fn replay_is_bit_exact(&self) -> bool {
        let fresh = self.replay();
        let values = self.values.borrow();
        fresh.iter().zip(values.iter()).all(|(a, b)| {
            a.shape() == b.shape()
                && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

impl<'t> Var<'t> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    /// Copy of the node's forward value.
    pub fn value(&self) -> Tensor {
        self.tape.values.borrow()[self.id].clone()
    }

    pub fn item(&self) -> Result<f64> {
        self.tape.values.borrow()[self.id].item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_shape(self, other: Var<'t>, op: &'static str) -> Result<()> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::Dimension { op, detail: format!("{:?} vs {:?}", a, b) });
        }
        Ok(())
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "add")?;
        Ok(self.tape.record(Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "sub")?;
        Ok(self.tape.record(Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "mul")?;
        Ok(self.tape.record(Op::Mul(self.id, other.id)))
    }

    /// Elementwise division; the caller guarantees a nonzero denominator.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "div")?;
        Ok(self.tape.record(Op::Div(self.id, other.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.record(Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape.record(Op::AddScalar(self.id, c))
    }

    /// Subtract a broadcast scalar node (gradient flows into both).
    pub fn sub_broadcast(self, s: Var<'t>) -> Result<Var<'t>> {
        if !self.tape.values.borrow()[s.id].is_scalar() {
            return Err(Error::Rank {
                op: "sub_broadcast",
                detail: format!("subtrahend must be scalar, shape {:?}", s.shape()),
            });
        }
        Ok(self.tape.record(Op::SubBroadcast(self.id, s.id)))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.record(Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.record(Op::Sigmoid(self.id))
    }

    /// sqrt(x + 1e-12); smooth at zero.
    pub fn sqrt_smooth(self) -> Var<'t> {
        self.tape.record(Op::SqrtSmooth(self.id))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        debug_assert!(lo <= hi);
        self.tape.record(Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(self) -> Var<'t> {
        self.tape.record(Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        assert!(self.tape.values.borrow()[self.id].len() > 0, "mean of empty tensor");
        self.tape.record(Op::Mean(self.id))
    }

    /// Non-overlapping k-by-k average pooling over a [C,H,W] tensor.
    pub fn avg_pool(self, k: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::Rank { op: "avg_pool", detail: format!("need rank 3, got {:?}", s) });
        }
        if k == 0 || s[1] % k != 0 || s[2] % k != 0 {
            return Err(Error::Size {
                op: "avg_pool",
                detail: format!("spatial dims {}x{} not divisible by {}", s[1], s[2], k),
            });
        }
        Ok(self.tape.record(Op::AvgPool { x: self.id, k }))
    }

    /// Depthwise Gaussian filter over a [C,H,W] tensor.
    pub fn gauss_blur(self, ksize: usize, sigma: f64, same: bool) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::Rank { op: "gauss_blur", detail: format!("need rank 3, got {:?}", s) });
        }
        if ksize % 2 == 0 {
            return Err(Error::Size { op: "gauss_blur", detail: format!("kernel size {} must be odd", ksize) });
        }
        if !same && (s[1] < ksize || s[2] < ksize) {
            return Err(Error::Size {
                op: "gauss_blur",
                detail: format!("image {}x{} smaller than window {}", s[1], s[2], ksize),
            });
        }
        Ok(self.tape.record(Op::GaussBlur { x: self.id, ksize, sigma, same }))
    }

    /// 2D convolution of a [C_in,H,W] input with a [C_out,C_in,k,k] kernel,
    /// zero padding.
    pub fn conv2d(self, kernel: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let xs = self.shape();
        let ks = kernel.shape();
        if xs.len() != 3 || ks.len() != 4 {
            return Err(Error::Rank {
                op: "conv2d",
                detail: format!("input rank {:?}, kernel rank {:?}", xs, ks),
            });
        }
        if ks[1] != xs[0] {
            return Err(Error::Dimension {
                op: "conv2d",
                detail: format!("kernel expects {} input channels, input has {}", ks[1], xs[0]),
            });
        }
        if stride < 1 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        if ks[2] > xs[1] + 2 * padding || ks[3] > xs[2] + 2 * padding {
            return Err(Error::Size {
                op: "conv2d",
                detail: format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    ks[2],
                    ks[3],
                    xs[1] + 2 * padding,
                    xs[2] + 2 * padding
                ),
            });
        }
        Ok(self.tape.record(Op::Conv2d { input: self.id, kernel: kernel.id, stride, padding }))
    }

    /// Bilinear sampling of a [C,H,W] input at absolute source coordinates
    /// given by a [Hg,Wg,2] grid; out-of-range coordinates clamp to the
    /// border. Output is [C,Hg,Wg].
    pub fn grid_sample(self, grid: Var<'t>) -> Result<Var<'t>> {
        let xs = self.shape();
        let gs = grid.shape();
        if xs.len() != 3 {
            return Err(Error::Rank { op: "grid_sample", detail: format!("input rank {:?}", xs) });
        }
        if gs.len() != 3 || gs[2] != 2 {
            return Err(Error::Dimension {
                op: "grid_sample",
                detail: format!("grid must be [H,W,2], got {:?}", gs),
            });
        }
        Ok(self.tape.record(Op::GridSample { input: self.id, grid: grid.id }))
    }

    /// Border-replicate padding of a [C,H,W] tensor by `margin` pixels.
    pub fn pad_replicate(self, margin: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::Rank {
                op: "pad_replicate",
                detail: format!("need rank 3, got {:?}", s),
            });
        }
        Ok(self.tape.record(Op::PadReplicate { x: self.id, margin }))
    }

    /// Subtract each channel's spatial mean over a [C,H,W] tensor.
    pub fn center_channels(self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::Rank {
                op: "center_channels",
                detail: format!("need rank 3, got {:?}", s),
            });
        }
        Ok(self.tape.record(Op::CenterChannels(self.id)))
    }

    /// Cosine similarity of two tensors flattened to vectors. Errors when
    /// either vector is all-zero.
    pub fn cosine_sim(self, other: Var<'t>) -> Result<Var<'t>> {
        let (la, lb) = (self.value().len(), other.value().len());
        if la != lb {
            return Err(Error::Dimension {
                op: "cosine_similarity",
                detail: format!("lengths {} vs {}", la, lb),
            });
        }
        {
            let values = self.tape.values.borrow();
            for (v, name) in [(&values[self.id], "first"), (&values[other.id], "second")] {
                if v.data().iter().all(|&x| x == 0.0) {
                    return Err(Error::DegenerateNorm {
                        op: "cosine_similarity",
                        detail: format!("{} argument is all-zero", name),
                    });
                }
            }
        }
        Ok(self.tape.record(Op::CosineSim(self.id, other.id)))
    }

    /// Per-column cosine between [C,H,W] features and a [C] embedding,
    /// producing an [H,W] map. Errors on a zero embedding.
    pub fn cosine_map(self, embedding: Var<'t>) -> Result<Var<'t>> {
        let fs = self.shape();
        let es = embedding.shape();
        if fs.len() != 3 || es != vec![fs[0]] {
            return Err(Error::Dimension {
                op: "cosine_map",
                detail: format!("features {:?} with embedding {:?}", fs, es),
            });
        }
        if self.tape.values.borrow()[embedding.id].data().iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateNorm {
                op: "cosine_map",
                detail: "embedding is all-zero".into(),
            });
        }
        Ok(self.tape.record(Op::CosineMap { features: self.id, embedding: embedding.id }))
    }

    /// Bilinear read of a feature column at fractional coordinates (border
    /// clamped); produces a [C] vector.
    pub fn bilinear_read(self, y: f64, x: f64) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::Rank { op: "bilinear_read", detail: format!("need rank 3, got {:?}", s) });
        }
        Ok(self.tape.record(Op::BilinearRead { features: self.id, y, x }))
    }

    /// Per-channel mean over a half-open row/column window; produces [C].
    pub fn region_mean(self, y0: usize, y1: usize, x0: usize, x1: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::Rank { op: "region_mean", detail: format!("need rank 3, got {:?}", s) });
        }
        if y0 >= y1 || x0 >= x1 || y1 > s[1] || x1 > s[2] {
            return Err(Error::Dimension {
                op: "region_mean",
                detail: format!("region [{},{})x[{},{}) in {}x{}", y0, y1, x0, x1, s[1], s[2]),
            });
        }
        Ok(self.tape.record(Op::RegionMean { features: self.id, y0, y1, x0, x1 }))
    }

    /// Rectangular crop of a rank-3 tensor.
    pub fn crop3(self, off: [usize; 3], size: [usize; 3]) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::Rank { op: "crop3", detail: format!("need rank 3, got {:?}", s) });
        }
        for d in 0..3 {
            if size[d] == 0 || off[d] + size[d] > s[d] {
                return Err(Error::Dimension {
                    op: "crop3",
                    detail: format!("axis {}: offset {} + size {} > {}", d, off[d], size[d], s[d]),
                });
            }
        }
        Ok(self.tape.record(Op::Crop3 { x: self.id, off, size }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let n: usize = shape.iter().product();
        if n != self.value().len() {
            return Err(Error::Dimension {
                op: "reshape",
                detail: format!("cannot view {} elements as {:?}", self.value().len(), shape),
            });
        }
        Ok(self.tape.record(Op::Reshape { x: self.id, shape: shape.to_vec() }))
    }
}

/// Free-function form of [`Var::cosine_sim`].
pub fn cosine_similarity<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    a.cosine_sim(b)
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match *op {
        Op::Leaf => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::SubBroadcast(a, b)
        | Op::CosineSim(a, b) => vec![a, b],
        Op::Scale(a, _)
        | Op::AddScalar(a, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::SqrtSmooth(a)
        | Op::Clamp(a, _, _)
        | Op::Sum(a)
        | Op::Mean(a) => vec![a],
        Op::Reshape { x, .. } => vec![x],
        Op::AvgPool { x, .. } | Op::GaussBlur { x, .. } | Op::Crop3 { x, .. } => vec![x],
        Op::CenterChannels(x) | Op::PadReplicate { x, .. } => vec![x],
        Op::Conv2d { input, kernel, .. } => vec![input, kernel],
        Op::GridSample { input, grid } => vec![input, grid],
        Op::CosineMap { features, embedding } => vec![features, embedding],
        Op::BilinearRead { features, .. } | Op::RegionMean { features, .. } => vec![features],
    }
}

fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot, na, nb)
}

fn eval_op(op: &Op, values: &[Tensor]) -> Tensor {
    match *op {
        Op::Leaf => unreachable!("leaves hold their registered value"),
        Op::Add(a, b) => zip_elementwise(&values[a], &values[b], |x, y| x + y),
        Op::Sub(a, b) => zip_elementwise(&values[a], &values[b], |x, y| x - y),
        Op::Mul(a, b) => zip_elementwise(&values[a], &values[b], |x, y| x * y),
        Op::Div(a, b) => zip_elementwise(&values[a], &values[b], |x, y| x / y),
        Op::Scale(a, c) => map_elementwise(&values[a], |x| x * c),
        Op::AddScalar(a, c) => map_elementwise(&values[a], |x| x + c),
        Op::SubBroadcast(a, s) => {
            let sv = values[s].data()[0];
            map_elementwise(&values[a], |x| x - sv)
        }
        Op::Relu(a) => map_elementwise(&values[a], |x| if x > 0.0 { x } else { 0.0 }),
        Op::Sigmoid(a) => map_elementwise(&values[a], |x| 1.0 / (1.0 + (-x).exp())),
        Op::SqrtSmooth(a) => map_elementwise(&values[a], |x| (x + SQRT_DELTA).sqrt()),
        Op::Clamp(a, lo, hi) => map_elementwise(&values[a], |x| x.clamp(lo, hi)),
        Op::Sum(a) => Tensor::scalar(values[a].data().iter().sum()),
        Op::Mean(a) => {
            let n = values[a].len();
            Tensor::scalar(values[a].data().iter().sum::<f64>() / n as f64)
        }
        Op::AvgPool { x, k } => {
            let t = &values[x];
            let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let (ho, wo) = (h / k, w / k);
            let mut out = Tensor::zeros(&[c, ho, wo]);
            let inv = 1.0 / (k * k) as f64;
            for ch in 0..c {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for a in 0..k {
                            for b in 0..k {
                                acc += t.at3(ch, i * k + a, j * k + b);
                            }
                        }
                        out.set3(ch, i, j, acc * inv);
                    }
                }
            }
            out
        }
        Op::GaussBlur { x, ksize, sigma, same } => {
            let t = &values[x];
            let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let kern = kernels::gauss_kernel_2d(ksize, sigma);
            let (out, ho, wo) = kernels::gauss_blur_forward(t.data(), c, h, w, &kern, ksize, same);
            Tensor::new(vec![c, ho, wo], out).unwrap()
        }
        Op::Conv2d { input, kernel, stride, padding } => {
            let x = &values[input];
            let k = &values[kernel];
            let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
            let (ho, wo) = kernels::conv2d_out_dims(h, w, kh, kw, stride, padding);
            let out =
                kernels::conv2d_forward(x.data(), ci, h, w, k.data(), co, kh, kw, stride, padding);
            Tensor::new(vec![co, ho, wo], out).unwrap()
        }
        Op::GridSample { input, grid } => {
            let x = &values[input];
            let gr = &values[grid];
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (hg, wg) = (gr.shape()[0], gr.shape()[1]);
            let out = kernels::grid_sample_forward(x.data(), c, h, w, gr.data(), hg, wg);
            Tensor::new(vec![c, hg, wg], out).unwrap()
        }
        Op::PadReplicate { x, margin } => {
            let t = &values[x];
            let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let m = margin as isize;
            let (ho, wo) = (h + 2 * margin, w + 2 * margin);
            let mut out = Tensor::zeros(&[c, ho, wo]);
            for ch in 0..c {
                for i in 0..ho {
                    let si = (i as isize - m).clamp(0, h as isize - 1) as usize;
                    for j in 0..wo {
                        let sj = (j as isize - m).clamp(0, w as isize - 1) as usize;
                        out.set3(ch, i, j, t.at3(ch, si, sj));
                    }
                }
            }
            out
        }
        Op::CenterChannels(a) => {
            let t = &values[a];
            let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let inv = 1.0 / (h * w) as f64;
            let mut out = t.clone();
            for ch in 0..c {
                let plane = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
                let m: f64 = plane.iter().sum::<f64>() * inv;
                for v in plane.iter_mut() {
                    *v -= m;
                }
            }
            out
        }
        Op::CosineSim(a, b) => {
            let (dot, na, nb) = cosine_parts(values[a].data(), values[b].data());
            Tensor::scalar(dot / (na * nb))
        }
        Op::CosineMap { features, embedding } => {
            let f = &values[features];
            let e = values[embedding].data();
            let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
            let ne = (e.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
            let mut out = Tensor::zeros(&[h, w]);
            for i in 0..h {
                for j in 0..w {
                    let mut dot = 0.0;
                    let mut ss = 0.0;
                    for ch in 0..c {
                        let v = f.at3(ch, i, j);
                        dot += v * e[ch];
                        ss += v * v;
                    }
                    let nf = (ss + NORM_EPS).sqrt();
                    out.data_mut()[i * w + j] = dot / (nf * ne);
                }
            }
            out
        }
        Op::BilinearRead { features, y, x } => {
            let f = &values[features];
            let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
            let bc = kernels::bilinear_coeffs(h, w, y, x);
            let mut out = Tensor::zeros(&[c]);
            for ch in 0..c {
                let plane = &f.data()[ch * h * w..(ch + 1) * h * w];
                out.data_mut()[ch] = kernels::bilinear_sample(plane, w, &bc);
            }
            out
        }
        Op::RegionMean { features, y0, y1, x0, x1 } => {
            let f = &values[features];
            let c = f.shape()[0];
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            let mut out = Tensor::zeros(&[c]);
            for ch in 0..c {
                let mut acc = 0.0;
                for i in y0..y1 {
                    for j in x0..x1 {
                        acc += f.at3(ch, i, j);
                    }
                }
                out.data_mut()[ch] = acc / area;
            }
            out
        }
        Op::Crop3 { x, off, size } => {
            let t = &values[x];
            let mut out = Tensor::zeros(&size);
            for a in 0..size[0] {
                for b in 0..size[1] {
                    for c in 0..size[2] {
                        let v = t.at3(off[0] + a, off[1] + b, off[2] + c);
                        out.set3(a, b, c, v);
                    }
                }
            }
            out
        }
        Op::Reshape { x, ref shape } => values[x].clone().reshaped(shape).unwrap(),
    }
}

fn map_elementwise(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).unwrap()
}

fn zip_elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn accumulate(grads: &mut [Option<Tensor>], ops: &[(Op, bool)], shapes: &[Tensor], id: usize, f: impl FnOnce(&mut [f64])) {
    if !ops[id].1 {
        return;
    }
    let slot = &mut grads[id];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shapes[id].shape()));
    }
    f(slot.as_mut().unwrap().data_mut());
}

fn backprop_op(
    op: &Op,
    g: &Tensor,
    out: &Tensor,
    values: &[Tensor],
    ops: &[(Op, bool)],
    grads: &mut Vec<Option<Tensor>>,
) {
    let gd = g.data();
    match *op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, ops, values, a, |ga| {
                for (o, &gi) in ga.iter_mut().zip(gd) {
                    *o += gi;
                }
            });
            accumulate(grads, ops, values, b, |gb| {
                for (o, &gi) in gb.iter_mut().zip(gd) {
                    *o += gi;
                }
            });
        }
        Op::Sub(a, b) => {
            accumulate(grads, ops, values, a, |ga| {
                for (o, &gi) in ga.iter_mut().zip(gd) {
                    *o += gi;
                }
            });
            accumulate(grads, ops, values, b, |gb| {
                for (o, &gi) in gb.iter_mut().zip(gd) {
                    *o -= gi;
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (values[a].data().to_vec(), values[b].data().to_vec());
            accumulate(grads, ops, values, a, |ga| {
                for ((o, &gi), &y) in ga.iter_mut().zip(gd).zip(&bv) {
                    *o += gi * y;
                }
            });
            accumulate(grads, ops, values, b, |gb| {
                for ((o, &gi), &x) in gb.iter_mut().zip(gd).zip(&av) {
                    *o += gi * x;
                }
            });
        }
        Op::Div(a, b) => {
            let (av, bv) = (values[a].data().to_vec(), values[b].data().to_vec());
            accumulate(grads, ops, values, a, |ga| {
                for ((o, &gi), &y) in ga.iter_mut().zip(gd).zip(&bv) {
                    *o += gi / y;
                }
            });
            accumulate(grads, ops, values, b, |gb| {
                for (i, (o, &gi)) in gb.iter_mut().zip(gd).enumerate() {
                    *o -= gi * av[i] / (bv[i] * bv[i]);
                }
            });
        }
        Op::Scale(a, c) => accumulate(grads, ops, values, a, |ga| {
            for (o, &gi) in ga.iter_mut().zip(gd) {
                *o += gi * c;
            }
        }),
        Op::AddScalar(a, _) => accumulate(grads, ops, values, a, |ga| {
            for (o, &gi) in ga.iter_mut().zip(gd) {
                *o += gi;
            }
        }),
        Op::SubBroadcast(a, s) => {
            accumulate(grads, ops, values, a, |ga| {
                for (o, &gi) in ga.iter_mut().zip(gd) {
                    *o += gi;
                }
            });
            let total: f64 = gd.iter().sum();
            accumulate(grads, ops, values, s, |gs| {
                gs[0] -= total;
            });
        }
        Op::Relu(a) => {
            let av = values[a].data().to_vec();
            accumulate(grads, ops, values, a, |ga| {
                for ((o, &gi), &x) in ga.iter_mut().zip(gd).zip(&av) {
                    if x > 0.0 {
                        *o += gi;
                    }
                }
            });
        }
        Op::Sigmoid(a) => {
            // derivative from the stored output: s * (1 - s)
            let sv = out.data();
            accumulate(grads, ops, values, a, |ga| {
                for ((o, &gi), &s) in ga.iter_mut().zip(gd).zip(sv) {
                    *o += gi * s * (1.0 - s);
                }
            });
        }
        Op::SqrtSmooth(a) => {
            let yv = out.data();
            accumulate(grads, ops, values, a, |ga| {
                for ((o, &gi), &y) in ga.iter_mut().zip(gd).zip(yv) {
                    *o += gi / (2.0 * y);
                }
            });
        }
        Op::Clamp(a, lo, hi) => {
            let av = values[a].data().to_vec();
            accumulate(grads, ops, values, a, |ga| {
                for ((o, &gi), &x) in ga.iter_mut().zip(gd).zip(&av) {
                    if (lo..=hi).contains(&x) {
                        *o += gi;
                    }
                }
            });
        }
        Op::Sum(a) => {
            let gv = gd[0];
            accumulate(grads, ops, values, a, |ga| {
                for o in ga.iter_mut() {
                    *o += gv;
                }
            });
        }
        Op::Mean(a) => {
            let gv = gd[0] / values[a].len() as f64;
            accumulate(grads, ops, values, a, |ga| {
                for o in ga.iter_mut() {
                    *o += gv;
                }
            });
        }
        Op::AvgPool { x, k } => {
            let t = &values[x];
            let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let (ho, wo) = (h / k, w / k);
            let inv = 1.0 / (k * k) as f64;
            accumulate(grads, ops, values, x, |gx| {
                for ch in 0..c {
                    for i in 0..ho {
                        for j in 0..wo {
                            let gv = gd[(ch * ho + i) * wo + j] * inv;
                            for a in 0..k {
                                for b in 0..k {
                                    gx[(ch * h + i * k + a) * w + j * k + b] += gv;
                                }
                            }
                        }
                    }
                }
            });
        }
        Op::GaussBlur { x, ksize, sigma, same } => {
            let t = &values[x];
            let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let kern = kernels::gauss_kernel_2d(ksize, sigma);
            accumulate(grads, ops, values, x, |gx| {
                kernels::gauss_blur_backward(gd, c, h, w, &kern, ksize, same, gx);
            });
        }
        Op::Conv2d { input, kernel, stride, padding } => {
            let x = &values[input];
            let k = &values[kernel];
            let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
            let xv = x.data().to_vec();
            let kv = k.data().to_vec();
            if ops[input].1 {
                accumulate(grads, ops, values, input, |gx| {
                    kernels::conv2d_backward(
                        gd, &xv, &kv, ci, h, w, co, kh, kw, stride, padding,
                        Some(gx), None,
                    );
                });
            }
            if ops[kernel].1 {
                accumulate(grads, ops, values, kernel, |gk| {
                    kernels::conv2d_backward(
                        gd, &xv, &kv, ci, h, w, co, kh, kw, stride, padding,
                        None, Some(gk),
                    );
                });
            }
        }
        Op::GridSample { input, grid } => {
            let x = &values[input];
            let gr = &values[grid];
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (hg, wg) = (gr.shape()[0], gr.shape()[1]);
            let xv = x.data().to_vec();
            let gv = gr.data().to_vec();
            if ops[input].1 {
                accumulate(grads, ops, values, input, |gx| {
                    kernels::grid_sample_backward(gd, &xv, c, h, w, &gv, hg, wg, Some(gx), None);
                });
            }
            if ops[grid].1 {
                accumulate(grads, ops, values, grid, |gg| {
                    kernels::grid_sample_backward(gd, &xv, c, h, w, &gv, hg, wg, None, Some(gg));
                });
            }
        }
        Op::PadReplicate { x, margin } => {
            let t = &values[x];
            let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let m = margin as isize;
            let (ho, wo) = (h + 2 * margin, w + 2 * margin);
            accumulate(grads, ops, values, x, |gx| {
                for ch in 0..c {
                    for i in 0..ho {
                        let si = (i as isize - m).clamp(0, h as isize - 1) as usize;
                        for j in 0..wo {
                            let sj = (j as isize - m).clamp(0, w as isize - 1) as usize;
                            gx[(ch * h + si) * w + sj] += gd[(ch * ho + i) * wo + j];
                        }
                    }
                }
            });
        }
        Op::CenterChannels(a) => {
            let t = &values[a];
            let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let inv = 1.0 / (h * w) as f64;
            accumulate(grads, ops, values, a, |ga| {
                for ch in 0..c {
                    let gplane = &gd[ch * h * w..(ch + 1) * h * w];
                    let m: f64 = gplane.iter().sum::<f64>() * inv;
                    for (o, &gi) in ga[ch * h * w..(ch + 1) * h * w].iter_mut().zip(gplane) {
                        *o += gi - m;
                    }
                }
            });
        }
        Op::CosineSim(a, b) => {
            let av = values[a].data().to_vec();
            let bv = values[b].data().to_vec();
            let (dot, na, nb) = cosine_parts(&av, &bv);
            let cos = dot / (na * nb);
            let gv = gd[0];
            accumulate(grads, ops, values, a, |ga| {
                for (i, o) in ga.iter_mut().enumerate() {
                    *o += gv * (bv[i] / (na * nb) - cos * av[i] / (na * na));
                }
            });
            accumulate(grads, ops, values, b, |gb| {
                for (i, o) in gb.iter_mut().enumerate() {
                    *o += gv * (av[i] / (na * nb) - cos * bv[i] / (nb * nb));
                }
            });
        }
        Op::CosineMap { features, embedding } => {
            let f = &values[features];
            let e = values[embedding].data().to_vec();
            let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
            let ne = (e.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
            let fv = f.data().to_vec();
            // per-column dot and smoothed norm, recomputed for the backward pass
            let col = |i: usize, j: usize| -> (f64, f64) {
                let mut dot = 0.0;
                let mut ss = 0.0;
                for ch in 0..c {
                    let v = fv[(ch * h + i) * w + j];
                    dot += v * e[ch];
                    ss += v * v;
                }
                (dot, (ss + NORM_EPS).sqrt())
            };
            let mut cache = vec![(0.0, 0.0); h * w];
            for i in 0..h {
                for j in 0..w {
                    cache[i * w + j] = col(i, j);
                }
            }
            if ops[features].1 {
                accumulate(grads, ops, values, features, |gf| {
                    for i in 0..h {
                        for j in 0..w {
                            let gv = gd[i * w + j];
                            if gv == 0.0 {
                                continue;
                            }
                            let (dot, nf) = cache[i * w + j];
                            let cos = dot / (nf * ne);
                            for ch in 0..c {
                                let v = fv[(ch * h + i) * w + j];
                                gf[(ch * h + i) * w + j] +=
                                    gv * (e[ch] / (nf * ne) - cos * v / (nf * nf));
                            }
                        }
                    }
                });
            }
            if ops[embedding].1 {
                accumulate(grads, ops, values, embedding, |ge| {
                    for i in 0..h {
                        for j in 0..w {
                            let gv = gd[i * w + j];
                            if gv == 0.0 {
                                continue;
                            }
                            let (dot, nf) = cache[i * w + j];
                            let cos = dot / (nf * ne);
                            for ch in 0..c {
                                let v = fv[(ch * h + i) * w + j];
                                ge[ch] += gv * (v / (nf * ne) - cos * e[ch] / (ne * ne));
                            }
                        }
                    }
                });
            }
        }
        Op::BilinearRead { features, y, x } => {
            let f = &values[features];
            let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
            let bc = kernels::bilinear_coeffs(h, w, y, x);
            let (w00, w01) = ((1.0 - bc.fi) * (1.0 - bc.fj), (1.0 - bc.fi) * bc.fj);
            let (w10, w11) = (bc.fi * (1.0 - bc.fj), bc.fi * bc.fj);
            accumulate(grads, ops, values, features, |gf| {
                for ch in 0..c {
                    let gv = gd[ch];
                    let base = ch * h * w;
                    gf[base + bc.i0 * w + bc.j0] += gv * w00;
                    gf[base + bc.i0 * w + bc.j1] += gv * w01;
                    gf[base + bc.i1 * w + bc.j0] += gv * w10;
                    gf[base + bc.i1 * w + bc.j1] += gv * w11;
                }
            });
        }
        Op::RegionMean { features, y0, y1, x0, x1 } => {
            let f = &values[features];
            let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
            let _ = h;
            let inv = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
            accumulate(grads, ops, values, features, |gf| {
                for ch in 0..c {
                    let gv = gd[ch] * inv;
                    for i in y0..y1 {
                        for j in x0..x1 {
                            gf[(ch * f.shape()[1] + i) * w + j] += gv;
                        }
                    }
                }
            });
        }
        Op::Crop3 { x, off, size } => {
            let t = &values[x];
            let (d1, d2) = (t.shape()[1], t.shape()[2]);
            accumulate(grads, ops, values, x, |gx| {
                for a in 0..size[0] {
                    for b in 0..size[1] {
                        for c in 0..size[2] {
                            gx[((off[0] + a) * d1 + off[1] + b) * d2 + off[2] + c] +=
                                gd[(a * size[1] + b) * size[2] + c];
                        }
                    }
                }
            });
        }
        Op::Reshape { x: a, .. } => accumulate(grads, ops, values, a, |ga| {
            for (o, &gi) in ga.iter_mut().zip(gd) {
                *o += gi;
            }
        }),
    }
}
