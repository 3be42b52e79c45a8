//! Objective terms of the attack pipeline: structural deformation loss,
//! flow-field control loss, feature fidelity loss, and the stage-two
//! simulation objective.

use crate::diffmath::{Tape, Tensor, Var, SQRT_DELTA};
use crate::error::{Error, Result};
use crate::segmodel::Model;

/// SSIM constants for dynamic range 1 (K1=0.01, K2=0.03).
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Coefficients of the objective terms. All nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Total-variation weight inside the control loss.
    pub lambda_tv: f64,
    /// Variance weight inside the control loss.
    pub lambda_var: f64,
    /// Control-loss coefficient in the deformation objective.
    pub lambda_c: f64,
    /// Fidelity-loss coefficient in the deformation objective.
    pub lambda_f: f64,
    /// Weight on the push-away term of the simulation objective.
    pub beta_pushaway: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_tv: 1e-3,
            lambda_var: 1e-3,
            lambda_c: 1.0,
            lambda_f: 20.0,
            beta_pushaway: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_tv", self.lambda_tv),
            ("lambda_var", self.lambda_var),
            ("lambda_c", self.lambda_c),
            ("lambda_f", self.lambda_f),
            ("beta_pushaway", self.beta_pushaway),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("loss weight {} must be >= 0, got {}", name, v)));
            }
        }
        Ok(())
    }
}

/// Mean SSIM over an 11x11 Gaussian window (sigma 1.5), constants for
/// dynamic range 1, averaged over channels and valid window positions.
pub fn ssim<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::Dimension { op: "ssim", detail: format!("{:?} vs {:?}", sa, sb) });
    }
    if sa.len() != 3 {
        return Err(Error::Rank { op: "ssim", detail: format!("need [C,H,W], got {:?}", sa) });
    }
    if sa[1] < SSIM_WINDOW || sa[2] < SSIM_WINDOW {
        return Err(Error::Size {
            op: "ssim",
            detail: format!("image {}x{} smaller than {0}x{0} window", sa[1], sa[2]),
        });
    }
    let win = |x: Var<'t>| x.gauss_blur(SSIM_WINDOW, SSIM_SIGMA, false);
    let mu_a = win(a)?;
    let mu_b = win(b)?;
    let s_aa = win(a.mul(a)?)?;
    let s_bb = win(b.mul(b)?)?;
    let s_ab = win(a.mul(b)?)?;

    let mu_a2 = mu_a.mul(mu_a)?;
    let mu_b2 = mu_b.mul(mu_b)?;
    let mu_ab = mu_a.mul(mu_b)?;
    let var_a = s_aa.sub(mu_a2)?;
    let var_b = s_bb.sub(mu_b2)?;
    let cov = s_ab.sub(mu_ab)?;

    let num = mu_ab.scale(2.0).add_scalar(SSIM_C1).mul(cov.scale(2.0).add_scalar(SSIM_C2))?;
    let den = mu_a2
        .add(mu_b2)?
        .add_scalar(SSIM_C1)
        .mul(var_a.add(var_b)?.add_scalar(SSIM_C2))?;
    Ok(num.div(den)?.mean())
}

/// SSIM between plain tensors on a private tape.
pub fn ssim_value(a: &Tensor, b: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    ssim(av, bv)?.item()
}

/// Deformation loss: SSIM between the deformed target and the original.
/// Minimizing it maximizes structural dissimilarity.
pub fn deformation_loss<'t>(deformed: Var<'t>, original: Var<'t>) -> Result<Var<'t>> {
    ssim(deformed, original)
}

/// Smoothed magnitude that is exactly zero at zero: sqrt(x + delta) - sqrt(delta).
fn smooth_len<'t>(x2: Var<'t>) -> Var<'t> {
    x2.sqrt_smooth().add_scalar(-SQRT_DELTA.sqrt())
}

/// Control loss over K flow fields: lambda_tv * L_TV + lambda_var * L_var.
///
/// L_TV sums, over all pixels p and 4-neighbors q, the magnitude of the
/// flow difference between p and q; L_var sums per-pixel deviations from
/// the field mean. Nonnegative, and zero iff every field is constant.
pub fn control_loss<'t>(
    tape: &'t Tape,
    flows: &[Var<'t>],
    lambda_tv: f64,
    lambda_var: f64,
) -> Result<Var<'t>> {
    if flows.is_empty() {
        return Err(Error::Config("control_loss needs at least one flow field".into()));
    }
    let mut total: Option<Var<'t>> = None;
    for flow in flows {
        let s = flow.shape();
        if s.len() != 3 || s[2] != 2 {
            return Err(Error::Dimension {
                op: "control_loss",
                detail: format!("flow must be [H,W,2], got {:?}", s),
            });
        }
        let (h, w) = (s[0], s[1]);
        let u = flow.crop3([0, 0, 0], [h, w, 1])?;
        let v = flow.crop3([0, 0, 1], [h, w, 1])?;

        let mut field_terms: Vec<Var<'t>> = Vec::new();

        // Horizontal and vertical neighbor differences; each unordered
        // pair appears once here and twice in the p/q double sum.
        if w > 1 {
            let du = u.crop3([0, 0, 0], [h, w - 1, 1])?.sub(u.crop3([0, 1, 0], [h, w - 1, 1])?)?;
            let dv = v.crop3([0, 0, 0], [h, w - 1, 1])?.sub(v.crop3([0, 1, 0], [h, w - 1, 1])?)?;
            let mag = smooth_len(du.mul(du)?.add(dv.mul(dv)?)?);
            field_terms.push(mag.sum().scale(2.0 * lambda_tv));
        }
        if h > 1 {
            let du = u.crop3([0, 0, 0], [h - 1, w, 1])?.sub(u.crop3([1, 0, 0], [h - 1, w, 1])?)?;
            let dv = v.crop3([0, 0, 0], [h - 1, w, 1])?.sub(v.crop3([1, 0, 0], [h - 1, w, 1])?)?;
            let mag = smooth_len(du.mul(du)?.add(dv.mul(dv)?)?);
            field_terms.push(mag.sum().scale(2.0 * lambda_tv));
        }

        // Variance term: deviation of each flow vector from the field mean.
        let du = u.sub_broadcast(u.mean())?;
        let dv = v.sub_broadcast(v.mean())?;
        let dev = smooth_len(du.mul(du)?.add(dv.mul(dv)?)?);
        field_terms.push(dev.sum().scale(lambda_var));

        for term in field_terms {
            total = Some(match total {
                None => term,
                Some(t) => t.add(term)?,
            });
        }
    }
    let _ = tape;
    Ok(total.expect("at least one term per field"))
}

/// Fidelity loss: 1 - cosine similarity between feature vectors. Range [0, 2].
pub fn fidelity_loss<'t>(feat_a: Var<'t>, feat_b: Var<'t>) -> Result<Var<'t>> {
    Ok(feat_a.cosine_sim(feat_b)?.scale(-1.0).add_scalar(1.0))
}

/// Stage-two objective on a tape:
/// L_F(f(deformed), f(adversarial)) - beta * L_F(f(original), f(adversarial)).
///
/// beta = 1 keeps the push-away term; beta = 0 drops it.
pub fn simulation_objective<'t>(
    tape: &'t Tape,
    model: &Model,
    deformed: Var<'t>,
    original: Var<'t>,
    adversarial: Var<'t>,
    beta: f64,
) -> Result<Var<'t>> {
    let f_adv = model.encode(tape, adversarial)?;
    let f_def = model.encode(tape, deformed)?;
    let pull = fidelity_loss(f_def, f_adv)?;
    if beta == 0.0 {
        return Ok(pull);
    }
    let f_orig = model.encode(tape, original)?;
    let push = fidelity_loss(f_orig, f_adv)?;
    pull.sub(push.scale(beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{finite_diff_check, test_rng::uniform_tensor};
    use approx::assert_relative_eq;

    /// Straightforward reference SSIM, independent of the tape path: builds
    /// its own window, slides it over valid positions, applies the textbook
    /// formula per window.
    fn reference_ssim(a: &Tensor, b: &Tensor) -> f64 {
        let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let k = 11usize;
        let sigma = 1.5f64;
        let m = (k / 2) as f64;
        let mut win = vec![0.0; k * k];
        let mut wsum = 0.0;
        for i in 0..k {
            for j in 0..k {
                let d2 = (i as f64 - m).powi(2) + (j as f64 - m).powi(2);
                win[i * k + j] = (-d2 / (2.0 * sigma * sigma)).exp();
                wsum += win[i * k + j];
            }
        }
        for v in &mut win {
            *v /= wsum;
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for ch in 0..c {
            for i in 0..=(h - k) {
                for j in 0..=(w - k) {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for di in 0..k {
                        for dj in 0..k {
                            let wv = win[di * k + dj];
                            let av = a.at3(ch, i + di, j + dj);
                            let bv = b.at3(ch, i + di, j + dj);
                            ma += wv * av;
                            mb += wv * bv;
                            saa += wv * av * av;
                            sbb += wv * bv * bv;
                            sab += wv * av * bv;
                        }
                    }
                    let (va, vb, vab) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    let c1 = 0.0001;
                    let c2 = 0.0009;
                    total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_self_is_one() {
        let img = uniform_tensor(&[2, 12, 12], 0.0, 1.0, 40);
        let v = ssim_value(&img, &img).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "got {}", v);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (c1v, c2v) = (0.3f64, 0.7f64);
        let a = Tensor::full(&[1, 12, 12], c1v);
        let b = Tensor::full(&[1, 12, 12], c2v);
        let expect = (2.0 * c1v * c2v + SSIM_C1) / (c1v * c1v + c2v * c2v + SSIM_C1);
        let v = ssim_value(&a, &b).unwrap();
        assert_relative_eq!(v, expect, epsilon = 1e-12);
    }

    #[test]
    fn ssim_matches_independent_reference() {
        for seed in 0..20u64 {
            let a = uniform_tensor(&[1, 16, 16], 0.0, 1.0, 300 + seed);
            let b = uniform_tensor(&[1, 16, 16], 0.0, 1.0, 400 + seed);
            let ours = ssim_value(&a, &b).unwrap();
            let refv = reference_ssim(&a, &b);
            assert!((ours - refv).abs() < 1e-9, "seed {}: {} vs {}", seed, ours, refv);
        }
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = uniform_tensor(&[1, 14, 14], 0.0, 1.0, 41);
        let b = uniform_tensor(&[1, 14, 14], 0.0, 1.0, 42);
        let ab = ssim_value(&a, &b).unwrap();
        let ba = ssim_value(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::zeros(&[1, 8, 8]);
        let tape = Tape::new();
        let av = tape.constant(a.clone());
        assert!(matches!(ssim(av, av).unwrap_err(), Error::Size { .. }));
    }

    #[test]
    fn ssim_gradient_passes_finite_differences() {
        let a = uniform_tensor(&[1, 12, 12], 0.1, 0.9, 43);
        let b = uniform_tensor(&[1, 12, 12], 0.1, 0.9, 44);
        let err = finite_diff_check(
            |t, v| {
                let bv = t.constant(b.clone());
                ssim(v, bv)
            },
            &a,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "got {}", err);
    }

    #[test]
    fn control_loss_zero_flow_is_exactly_zero() {
        let tape = Tape::new();
        let f = tape.leaf(Tensor::zeros(&[4, 4, 2]));
        let l = control_loss(&tape, &[f], 1.0, 1.0).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);
    }

    #[test]
    fn control_loss_constant_flow_is_exactly_zero() {
        let mut v = Tensor::zeros(&[5, 3, 2]);
        for i in 0..5 {
            for j in 0..3 {
                v.set3(i, j, 0, 2.0);
                v.set3(i, j, 1, 3.0);
            }
        }
        let tape = Tape::new();
        let f = tape.leaf(v);
        let l = control_loss(&tape, &[f], 1.0, 1.0).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);
    }

    #[test]
    fn control_loss_hand_computed_double_sum() {
        // 2x2 field, pixel (0,0) displaced by (1,0), everything else zero.
        let mut v = Tensor::zeros(&[2, 2, 2]);
        v.set3(0, 0, 0, 1.0);
        let tape = Tape::new();
        let f = tape.leaf(v.clone());
        let got = control_loss(&tape, &[f], 1.0, 1.0).unwrap().item().unwrap();

        // Direct summation of the double sum with plain square roots.
        let du = |i: usize, j: usize| v.at3(i, j, 0);
        let dv = |i: usize, j: usize| v.at3(i, j, 1);
        let mut tv = 0.0;
        for i in 0..2i64 {
            for j in 0..2i64 {
                for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                    if !(0..2).contains(&ni) || !(0..2).contains(&nj) {
                        continue;
                    }
                    let ddu = du(i as usize, j as usize) - du(ni as usize, nj as usize);
                    let ddv = dv(i as usize, j as usize) - dv(ni as usize, nj as usize);
                    tv += (ddu * ddu + ddv * ddv).sqrt();
                }
            }
        }
        let mean_u: f64 = (0..4).map(|p| v.data()[p * 2]).sum::<f64>() / 4.0;
        let mean_v: f64 = (0..4).map(|p| v.data()[p * 2 + 1]).sum::<f64>() / 4.0;
        let mut var = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let a = du(i, j) - mean_u;
                let b = dv(i, j) - mean_v;
                var += (a * a + b * b).sqrt();
            }
        }
        let expect = tv + var;
        assert!((got - expect).abs() < 1e-4, "got {}, hand {}", got, expect);
    }

    #[test]
    fn control_loss_nonnegative_on_random_fields() {
        for seed in 0..10u64 {
            let v = uniform_tensor(&[4, 4, 2], -3.0, 3.0, 500 + seed);
            let tape = Tape::new();
            let f = tape.leaf(v);
            let l = control_loss(&tape, &[f], 1e-3, 1e-3).unwrap().item().unwrap();
            assert!(l >= 0.0);
        }
    }

    #[test]
    fn control_loss_gradient_passes_finite_differences() {
        let v = uniform_tensor(&[4, 4, 2], -1.0, 1.0, 45);
        let err = finite_diff_check(|t, x| control_loss(t, &[x], 1.0, 1.0), &v, 1e-4).unwrap();
        assert!(err < 1e-4, "got {}", err);
    }

    #[test]
    fn fidelity_loss_identical_orthogonal_antiparallel() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![0.6, 0.0]).unwrap());
        let same = fidelity_loss(a, a).unwrap().item().unwrap();
        assert!(same.abs() < 1e-12);

        let b = tape.leaf(Tensor::new(vec![2], vec![0.0, 2.0]).unwrap());
        assert!((fidelity_loss(a, b).unwrap().item().unwrap() - 1.0).abs() < 1e-12);

        let c = tape.leaf(Tensor::new(vec![2], vec![-1.2, 0.0]).unwrap());
        assert!((fidelity_loss(a, c).unwrap().item().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_loss_symmetric_and_scale_invariant() {
        let av = uniform_tensor(&[8], -1.0, 1.0, 46);
        let bv = uniform_tensor(&[8], -1.0, 1.0, 47);
        let tape = Tape::new();
        let a = tape.leaf(av.clone());
        let b = tape.leaf(bv.clone());
        let ab = fidelity_loss(a, b).unwrap().item().unwrap();
        let ba = fidelity_loss(b, a).unwrap().item().unwrap();
        assert!((ab - ba).abs() < 1e-12);

        let scaled = tape.leaf(Tensor::new(vec![8], av.data().iter().map(|v| v * 3.7).collect()).unwrap());
        let l = fidelity_loss(a, scaled).unwrap().item().unwrap();
        assert!(l.abs() < 1e-9, "scale invariance violated: {}", l);
    }

    #[test]
    fn fidelity_loss_gradient_passes_finite_differences() {
        let a = uniform_tensor(&[8], -1.0, 1.0, 48);
        let b = uniform_tensor(&[8], -1.0, 1.0, 49);
        let err = finite_diff_check(
            |t, v| fidelity_loss(v, t.constant(b.clone())),
            &a,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "got {}", err);
    }

    #[test]
    fn loss_weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights { lambda_tv: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
