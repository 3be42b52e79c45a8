//! Plain-array forward/backward routines shared by tape construction,
//! replay, and the backward pass.

/// Smoothing constant under square roots; keeps gradients finite at zero.
pub const SQRT_DELTA: f64 = 1e-12;

/// Bilinear interpolation coefficients at a (possibly fractional,
/// possibly out-of-range) source coordinate. Coordinates clamp to the
/// image border.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Bilinear {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
    pub fi: f64,
    pub fj: f64,
    /// 1.0 when the unclamped coordinate is inside [0, dim-1], else 0.0;
    /// multiplies the gradient w.r.t. the coordinate.
    pub pass_i: f64,
    pub pass_j: f64,
}

pub(crate) fn bilinear_coeffs(h: usize, w: usize, u: f64, v: f64) -> Bilinear {
    let hi = (h - 1) as f64;
    let wi = (w - 1) as f64;
    let uc = u.clamp(0.0, hi);
    let vc = v.clamp(0.0, wi);
    let i0 = uc.floor() as usize;
    let j0 = vc.floor() as usize;
    let i1 = (i0 + 1).min(h - 1);
    let j1 = (j0 + 1).min(w - 1);
    Bilinear {
        i0,
        i1,
        j0,
        j1,
        fi: uc - i0 as f64,
        fj: vc - j0 as f64,
        pass_i: if (0.0..=hi).contains(&u) { 1.0 } else { 0.0 },
        pass_j: if (0.0..=wi).contains(&v) { 1.0 } else { 0.0 },
    }
}

/// Sample one channel plane at the given coefficients. Integer hits copy
/// the source value bit-exactly.
#[inline]
pub(crate) fn bilinear_sample(plane: &[f64], w: usize, b: &Bilinear) -> f64 {
    if b.fi == 0.0 && b.fj == 0.0 {
        return plane[b.i0 * w + b.j0];
    }
    let v00 = plane[b.i0 * w + b.j0];
    let v01 = plane[b.i0 * w + b.j1];
    let v10 = plane[b.i1 * w + b.j0];
    let v11 = plane[b.i1 * w + b.j1];
    (1.0 - b.fi) * ((1.0 - b.fj) * v00 + b.fj * v01) + b.fi * ((1.0 - b.fj) * v10 + b.fj * v11)
}

pub(crate) fn conv2d_out_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize) {
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (w + 2 * padding - kw) / stride + 1;
    (ho, wo)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    k: &[f64],
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let (ho, wo) = conv2d_out_dims(h, w, kh, kw, stride, padding);
    let mut out = vec![0.0; co * ho * wo];
    let p = padding as isize;
    for c_out in 0..co {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = 0.0;
                for c_in in 0..ci {
                    let plane = &x[c_in * h * w..(c_in + 1) * h * w];
                    let kern = &k[((c_out * ci + c_in) * kh) * kw..((c_out * ci + c_in + 1) * kh) * kw];
                    for dh in 0..kh {
                        let ih = (oh * stride + dh) as isize - p;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let row = &plane[ih as usize * w..(ih as usize + 1) * w];
                        let krow = &kern[dh * kw..(dh + 1) * kw];
                        for dw in 0..kw {
                            let iw = (ow * stride + dw) as isize - p;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            acc += row[iw as usize] * krow[dw];
                        }
                    }
                }
                out[(c_out * ho + oh) * wo + ow] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    g: &[f64],
    x: &[f64],
    k: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    mut gx: Option<&mut [f64]>,
    mut gk: Option<&mut [f64]>,
) {
    let (ho, wo) = conv2d_out_dims(h, w, kh, kw, stride, padding);
    let p = padding as isize;
    for c_out in 0..co {
        for oh in 0..ho {
            for ow in 0..wo {
                let gv = g[(c_out * ho + oh) * wo + ow];
                if gv == 0.0 {
                    continue;
                }
                for c_in in 0..ci {
                    for dh in 0..kh {
                        let ih = (oh * stride + dh) as isize - p;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for dw in 0..kw {
                            let iw = (ow * stride + dw) as isize - p;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let xi = (c_in * h + ih as usize) * w + iw as usize;
                            let ki = ((c_out * ci + c_in) * kh + dh) * kw + dw;
                            if let Some(gx) = gx.as_deref_mut() {
                                gx[xi] += gv * k[ki];
                            }
                            if let Some(gk) = gk.as_deref_mut() {
                                gk[ki] += gv * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Normalized 2D Gaussian kernel of odd size `ksize`. A non-positive sigma
/// degenerates to the identity (delta) kernel.
pub fn gauss_kernel_2d(ksize: usize, sigma: f64) -> Vec<f64> {
    assert!(ksize % 2 == 1, "gaussian kernel size must be odd");
    let m = (ksize / 2) as isize;
    let mut k = vec![0.0; ksize * ksize];
    if sigma <= 0.0 {
        k[(m as usize) * ksize + m as usize] = 1.0;
        return k;
    }
    let s2 = 2.0 * sigma * sigma;
    let mut total = 0.0;
    for a in 0..ksize {
        for b in 0..ksize {
            let da = a as isize - m;
            let db = b as isize - m;
            let v = (-((da * da + db * db) as f64) / s2).exp();
            k[a * ksize + b] = v;
            total += v;
        }
    }
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Depthwise Gaussian filter. `same = true` keeps the spatial size using
/// border replication; `same = false` keeps only valid window positions.
pub(crate) fn gauss_blur_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    ksize: usize,
    same: bool,
) -> (Vec<f64>, usize, usize) {
    let m = (ksize / 2) as isize;
    let (ho, wo) = if same { (h, w) } else { (h - ksize + 1, w - ksize + 1) };
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = 0.0;
                for a in 0..ksize {
                    for b in 0..ksize {
                        let (ii, jj) = if same {
                            (
                                (i as isize + a as isize - m).clamp(0, h as isize - 1) as usize,
                                (j as isize + b as isize - m).clamp(0, w as isize - 1) as usize,
                            )
                        } else {
                            (i + a, j + b)
                        };
                        acc += kernel[a * ksize + b] * plane[ii * w + jj];
                    }
                }
                out[(ch * ho + i) * wo + j] = acc;
            }
        }
    }
    (out, ho, wo)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gauss_blur_backward(
    g: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    ksize: usize,
    same: bool,
    gx: &mut [f64],
) {
    let m = (ksize / 2) as isize;
    let (ho, wo) = if same { (h, w) } else { (h - ksize + 1, w - ksize + 1) };
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let gv = g[(ch * ho + i) * wo + j];
                if gv == 0.0 {
                    continue;
                }
                for a in 0..ksize {
                    for b in 0..ksize {
                        let (ii, jj) = if same {
                            (
                                (i as isize + a as isize - m).clamp(0, h as isize - 1) as usize,
                                (j as isize + b as isize - m).clamp(0, w as isize - 1) as usize,
                            )
                        } else {
                            (i + a, j + b)
                        };
                        gx[(ch * h + ii) * w + jj] += gv * kernel[a * ksize + b];
                    }
                }
            }
        }
    }
}

pub(crate) fn grid_sample_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    grid: &[f64],
    hg: usize,
    wg: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c * hg * wg];
    for i in 0..hg {
        for j in 0..wg {
            let u = grid[(i * wg + j) * 2];
            let v = grid[(i * wg + j) * 2 + 1];
            let bc = bilinear_coeffs(h, w, u, v);
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                out[(ch * hg + i) * wg + j] = bilinear_sample(plane, w, &bc);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn grid_sample_backward(
    g: &[f64],
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    grid: &[f64],
    hg: usize,
    wg: usize,
    mut gx: Option<&mut [f64]>,
    mut ggrid: Option<&mut [f64]>,
) {
    for i in 0..hg {
        for j in 0..wg {
            let u = grid[(i * wg + j) * 2];
            let v = grid[(i * wg + j) * 2 + 1];
            let bc = bilinear_coeffs(h, w, u, v);
            let (w00, w01) = ((1.0 - bc.fi) * (1.0 - bc.fj), (1.0 - bc.fi) * bc.fj);
            let (w10, w11) = (bc.fi * (1.0 - bc.fj), bc.fi * bc.fj);
            let mut du = 0.0;
            let mut dv = 0.0;
            for ch in 0..c {
                let gv = g[(ch * hg + i) * wg + j];
                if gv == 0.0 {
                    continue;
                }
                let base = ch * h * w;
                let (p00, p01) = (base + bc.i0 * w + bc.j0, base + bc.i0 * w + bc.j1);
                let (p10, p11) = (base + bc.i1 * w + bc.j0, base + bc.i1 * w + bc.j1);
                if let Some(gx) = gx.as_deref_mut() {
                    gx[p00] += gv * w00;
                    gx[p01] += gv * w01;
                    gx[p10] += gv * w10;
                    gx[p11] += gv * w11;
                }
                if ggrid.is_some() {
                    let (v00, v01, v10, v11) = (x[p00], x[p01], x[p10], x[p11]);
                    du += gv * ((1.0 - bc.fj) * (v10 - v00) + bc.fj * (v11 - v01));
                    dv += gv * ((1.0 - bc.fi) * (v01 - v00) + bc.fi * (v11 - v10));
                }
            }
            if let Some(gg) = ggrid.as_deref_mut() {
                gg[(i * wg + j) * 2] += du * bc.pass_i;
                gg[(i * wg + j) * 2 + 1] += dv * bc.pass_j;
            }
        }
    }
}
