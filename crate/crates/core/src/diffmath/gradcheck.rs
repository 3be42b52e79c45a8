//! Central-finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Relative-error floor; keeps the ratio defined when a coordinate's true
/// derivative is zero.
const REL_FLOOR: f64 = 1e-8;

/// Central-difference gradient of a scalar-valued function, evaluated
/// independently of any tape. This is the oracle side of the check.
pub fn central_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        grad.data_mut()[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Ok(grad)
}

/// max_i |analytic_i - fd_i| / (|fd_i| + 1e-8)
pub fn max_rel_error(analytic: &Tensor, fd: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(fd.data())
        .map(|(&a, &d)| (a - d).abs() / (d.abs() + REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Build a scalar loss from a leaf registered for `x`, then compare the
/// tape gradient against central finite differences. Returns the max
/// relative error over all coordinates.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let loss = f(&tape, leaf)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.wrt(leaf);

    let fd = central_diff_grad(
        |xt| {
            let t = Tape::new();
            let v = t.leaf(xt.clone());
            f(&t, v)?.item()
        },
        x,
        h,
    )?;
    Ok(max_rel_error(&analytic, &fd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::test_rng::uniform_tensor;

    #[test]
    fn linear_function_is_exact() {
        let x = uniform_tensor(&[2, 4], -1.0, 1.0, 7);
        let err = finite_diff_check(|_, v| Ok(v.sum()), &x, 1e-4).unwrap();
        assert!(err < 1e-12, "sum should be exact, got {}", err);
    }

    #[test]
    fn sum_of_squares_matches_analytic() {
        let x = uniform_tensor(&[8], -1.0, 1.0, 11);
        let err = finite_diff_check(|_, v| v.mul(v).map(|m| m.sum()), &x, 1e-4).unwrap();
        assert!(err < 1e-6, "got {}", err);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // Negative control: a deliberately wrong analytic gradient must
        // blow past the tolerance.
        let x = uniform_tensor(&[6], -1.0, 1.0, 13);
        let fd = central_diff_grad(
            |t| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            1e-4,
        )
        .unwrap();
        let mut corrupted = fd.clone();
        for v in corrupted.data_mut() {
            *v *= 1.5;
        }
        assert!(max_rel_error(&corrupted, &fd) > 1e-2);
    }
}
