//! Differentiable flow-field image deformation, including multi-field
//! compositing through pre-defined filter masks.

use crate::diffmath::{gauss_kernel_2d, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Per-pixel displacement grid. `vectors` is [H,W,2] holding (du, dv) in
/// pixel units; the zero field is the identity deformation.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    vectors: Tensor,
}

impl FlowField {
    pub fn new(vectors: Tensor) -> Result<Self> {
        let s = vectors.shape();
        if s.len() != 3 || s[2] != 2 {
            return Err(Error::Dimension {
                op: "FlowField::new",
                detail: format!("expected [H,W,2], got {:?}", s),
            });
        }
        Ok(FlowField { vectors })
    }

    pub fn height(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn into_vectors(self) -> Tensor {
        self.vectors
    }
}

/// All-zero flow: the identity mapping.
pub fn identity_flow(h: usize, w: usize) -> FlowField {
    FlowField { vectors: Tensor::zeros(&[h, w, 2]) }
}

/// Fixed spatial weight maps combining several deformed variants; at every
/// pixel the K mask values sum to 1.
#[derive(Debug, Clone)]
pub struct FilterMaskSet {
    masks: Vec<Tensor>,
}

impl FilterMaskSet {
    pub fn count(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[Tensor] {
        &self.masks
    }

    /// Check the partition-of-unity invariant.
    pub fn validate(&self) -> Result<()> {
        let s = self.masks[0].shape().to_vec();
        let n = self.masks[0].len();
        for i in 0..n {
            let total: f64 = self.masks.iter().map(|m| m.data()[i]).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "filter masks sum to {} at pixel {} of {:?}",
                    total, i, s
                )));
            }
        }
        Ok(())
    }
}

/// Factor K into the most-square grid (rows, cols) with rows*cols == K.
fn grid_factorization(k: usize) -> Option<(usize, usize)> {
    let mut best = None;
    for r in 1..=k {
        if k % r == 0 {
            let c = k / r;
            if r <= c {
                best = Some((r, c));
            }
        }
    }
    best
}

/// Build K filter masks: an axis-aligned grid of square patches assigned
/// round-robin to the K fields, Gaussian-blurred at the boundaries, then
/// renormalized to a partition of unity.
pub fn make_filter_masks(h: usize, w: usize, k: usize, blur_sigma: f64) -> Result<FilterMaskSet> {
    if k == 0 {
        return Err(Error::Config("mask count K must be >= 1".into()));
    }
    if k == 1 {
        return Ok(FilterMaskSet { masks: vec![Tensor::full(&[h, w], 1.0)] });
    }
    let (gr, gc) = grid_factorization(k)
        .ok_or_else(|| Error::Config(format!("no grid factorization for K={}", k)))?;
    if h % gr != 0 || w % gc != 0 {
        return Err(Error::Config(format!(
            "image {}x{} has no integer patch grid for K={} ({}x{} fields)",
            h, w, k, gr, gc
        )));
    }
    // One rectangular patch per field, assigned round-robin over the grid.
    let (ph, pw) = (h / gr, w / gc);
    let mut masks = vec![Tensor::zeros(&[h, w]); k];
    for bi in 0..gr {
        for bj in 0..gc {
            let owner = (bi * gc + bj) % k;
            let m = &mut masks[owner];
            for i in bi * ph..(bi + 1) * ph {
                for j in bj * pw..(bj + 1) * pw {
                    m.data_mut()[i * w + j] = 1.0;
                }
            }
        }
    }
    if blur_sigma > 0.0 {
        let ksize = (2 * (3.0 * blur_sigma).ceil() as usize + 1).min(2 * (h.min(w) / 2) - 1);
        let kern = gauss_kernel_2d(ksize, blur_sigma);
        masks = masks
            .into_iter()
            .map(|m| blur_plane(&m, h, w, &kern, ksize))
            .collect();
        // renormalize to a partition of unity
        for i in 0..h * w {
            let total: f64 = masks.iter().map(|m| m.data()[i]).sum();
            for m in &mut masks {
                m.data_mut()[i] /= total;
            }
        }
    }
    let set = FilterMaskSet { masks };
    set.validate()?;
    Ok(set)
}

fn blur_plane(m: &Tensor, h: usize, w: usize, kern: &[f64], ksize: usize) -> Tensor {
    let mm = (ksize / 2) as isize;
    let mut out = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..ksize {
                for b in 0..ksize {
                    let ii = (i as isize + a as isize - mm).clamp(0, h as isize - 1) as usize;
                    let jj = (j as isize + b as isize - mm).clamp(0, w as isize - 1) as usize;
                    acc += kern[a * ksize + b] * m.data()[ii * w + jj];
                }
            }
            out.data_mut()[i * w + j] = acc;
        }
    }
    out
}

/// Backward-warp `image` by `flow`: output pixel (i,j) reads the input at
/// (i - du(i,j), j - dv(i,j)), so a constant flow (a,b) shifts content by
/// (+a,+b). Differentiable w.r.t. both image and flow.
pub fn deform<'t>(tape: &'t Tape, image: Var<'t>, flow: Var<'t>) -> Result<Var<'t>> {
    let is = image.shape();
    let fs = flow.shape();
    if is.len() != 3 || fs.len() != 3 || fs[2] != 2 || is[1] != fs[0] || is[2] != fs[1] {
        return Err(Error::Dimension {
            op: "deform",
            detail: format!("image {:?} vs flow {:?}", is, fs),
        });
    }
    let (h, w) = (is[1], is[2]);
    let mut base = Tensor::zeros(&[h, w, 2]);
    for i in 0..h {
        for j in 0..w {
            base.set3(i, j, 0, i as f64);
            base.set3(i, j, 1, j as f64);
        }
    }
    let grid = tape.constant(base).sub(flow)?;
    image.grid_sample(grid)
}

/// Plain-value deformation on a private tape.
pub fn deform_tensor(image: &Tensor, flow: &FlowField) -> Result<Tensor> {
    let tape = Tape::new();
    let img = tape.constant(image.clone());
    let fl = tape.constant(flow.vectors().clone());
    Ok(deform(&tape, img, fl)?.value())
}

/// Composite deformation: sum over k of mask_k * deform(image, flow_k).
pub fn composite_deform<'t>(
    tape: &'t Tape,
    image: Var<'t>,
    flows: &[Var<'t>],
    masks: &FilterMaskSet,
) -> Result<Var<'t>> {
    if flows.len() != masks.count() {
        return Err(Error::Config(format!(
            "{} flow fields but {} filter masks",
            flows.len(),
            masks.count()
        )));
    }
    let is = image.shape();
    let c = is[0];
    let mut acc: Option<Var<'t>> = None;
    for (flow, mask) in flows.iter().zip(masks.masks()) {
        let warped = deform(tape, image, *flow)?;
        // broadcast the [H,W] mask across channels as a constant
        let mut mdata = Vec::with_capacity(c * mask.len());
        for _ in 0..c {
            mdata.extend_from_slice(mask.data());
        }
        let m = tape.constant(Tensor::new(vec![c, is[1], is[2]], mdata)?);
        let term = warped.mul(m)?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(term)?,
        });
    }
    Ok(acc.expect("K >= 1 enforced by FilterMaskSet"))
}
