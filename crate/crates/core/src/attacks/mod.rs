//! The two-stage deformation-simulation attack and the comparison attacks,
//! sharing one signed-gradient update core with epsilon-ball clipping.

mod baselines;
mod uad;

pub use baselines::{aa_attack, attack_sam_k, pata_attack, sam_grid_prompts, tap_attack};
pub use uad::{deformation_stage, proxy_perturb, simulation_stage, uad_attack};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Every hyperparameter of an attack run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// L-infinity radius in [0,1] pixel units.
    pub epsilon: f64,
    /// Signed-gradient step size.
    pub alpha: f64,
    /// Simulation (final adversarial update) iterations T.
    pub steps: usize,
    /// Proxy perturbation iterations T_f.
    pub proxy_steps: usize,
    /// Deformation iterations T_D.
    pub deform_steps: usize,
    /// Gradient step size on flow-field parameters.
    pub deform_step_size: f64,
    pub weights: LossWeights,
    /// Number of concurrently optimized flow fields K.
    pub num_flow_fields: usize,
    /// Gaussian blur at filter-mask boundaries, in pixels.
    pub mask_blur_sigma: f64,
    pub seed: u64,
    /// Gradient momentum decay; 0 disables MI.
    pub momentum_mu: f64,
    /// Probability of the input-diversity transform; 0 disables DI.
    pub input_diversity_prob: f64,
    /// Resize range for the input-diversity transform.
    pub di_scale: (f64, f64),
    /// Feature-dominance weight of the PATA regularizer.
    pub pata_lambda_dom: f64,
    /// Point-prompt count K of the grid-prompt attack.
    pub sam_prompts: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps: 40,
            proxy_steps: 4,
            deform_steps: 40,
            deform_step_size: 1000.0,
            weights: LossWeights::default(),
            num_flow_fields: 4,
            mask_blur_sigma: 2.0,
            seed: 0,
            momentum_mu: 0.0,
            input_diversity_prob: 0.0,
            di_scale: (0.9, 1.1),
            pata_lambda_dom: 0.1,
            sam_prompts: 400,
        }
    }
}

impl AttackConfig {
    /// Iteration counts of 0 are tolerated and produce the identity attack.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= self.epsilon && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha <= epsilon <= 1, got alpha={} epsilon={}",
                self.alpha, self.epsilon
            )));
        }
        if self.num_flow_fields < 1 {
            return Err(Error::Config("num_flow_fields must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.input_diversity_prob) {
            return Err(Error::Config(format!(
                "input_diversity_prob must be in [0,1], got {}",
                self.input_diversity_prob
            )));
        }
        if !(self.di_scale.0 > 0.0 && self.di_scale.0 <= self.di_scale.1) {
            return Err(Error::Config(format!("bad di_scale range {:?}", self.di_scale)));
        }
        if self.momentum_mu < 0.0 || self.pata_lambda_dom < 0.0 {
            return Err(Error::Config("momentum_mu and pata_lambda_dom must be >= 0".into()));
        }
        if self.sam_prompts < 1 {
            return Err(Error::Config("sam_prompts must be >= 1".into()));
        }
        self.weights.validate()
    }
}

/// Per-iteration loss trace, persisted as CSV.
#[derive(Debug, Clone, Default)]
pub struct LossTrace {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl LossTrace {
    pub fn new(columns: &[&'static str]) -> Self {
        LossTrace { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{:.12}", v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Output of any attack: the perturbation, the adversarial image, the
/// deformed target when one exists, and the loss trace.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub perturbation: Tensor,
    pub adversarial: Tensor,
    pub deformed_target: Option<Tensor>,
    pub trace: LossTrace,
    pub config: AttackConfig,
}

impl AttackResult {
    /// Check the feasibility invariants against the clean image.
    pub fn validate(&self, original: &Tensor) -> Result<()> {
        let eps = self.config.epsilon + 1e-9;
        for ((&r, &a), &o) in self
            .perturbation
            .data()
            .iter()
            .zip(self.adversarial.data())
            .zip(original.data())
        {
            if r.abs() > eps {
                return Err(Error::Config(format!("|r|={} exceeds epsilon {}", r.abs(), eps)));
            }
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("adversarial pixel {} outside [0,1]", a)));
            }
            if (o + r - a).abs() > 1e-12 {
                return Err(Error::Config("perturbation does not reproduce adversarial".into()));
            }
        }
        Ok(())
    }
}

/// Project each element into [original - eps, original + eps] and [0, 1].
pub fn clip_step(candidate: &Tensor, original: &Tensor, epsilon: f64) -> Tensor {
    debug_assert_eq!(candidate.shape(), original.shape());
    let data = candidate
        .data()
        .iter()
        .zip(original.data())
        .map(|(&c, &o)| c.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0))
        .collect();
    Tensor::new(original.shape().to_vec(), data).unwrap()
}

/// Gradient-momentum accumulator (MI): g_t = mu * g_{t-1} + grad / ||grad||_1.
/// With mu = 0 the step direction is bit-identical to sign(grad).
pub(crate) struct MomentumAccumulator {
    mu: f64,
    accumulated: Option<Vec<f64>>,
}

impl MomentumAccumulator {
    pub(crate) fn new(mu: f64) -> Self {
        MomentumAccumulator { mu, accumulated: None }
    }

    /// Fold in a raw gradient, returning the signed step direction.
    pub(crate) fn direction(&mut self, grad: &Tensor) -> Vec<f64> {
        if self.mu == 0.0 {
            return grad.data().iter().map(|&g| sign(g)).collect();
        }
        let l1: f64 = grad.data().iter().map(|g| g.abs()).sum();
        let scale = if l1 > 0.0 { 1.0 / l1 } else { 0.0 };
        let acc = self
            .accumulated
            .get_or_insert_with(|| vec![0.0; grad.len()]);
        for (a, &g) in acc.iter_mut().zip(grad.data()) {
            *a = self.mu * *a + g * scale;
        }
        acc.iter().map(|&g| sign(g)).collect()
    }
}

#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Input-diversity transform (DI): with probability p, resample the image
/// through a random resize about a random anchor (border replicate). Scale
/// exactly 1 short-circuits to the untouched input.
pub(crate) fn diversify<'t>(
    tape: &'t Tape,
    image: Var<'t>,
    prob: f64,
    scale_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Var<'t>> {
    if prob == 0.0 || !rng.random_bool(prob.min(1.0)) {
        return Ok(image);
    }
    let s = if scale_range.0 == scale_range.1 {
        scale_range.0
    } else {
        rng.random_range(scale_range.0..scale_range.1)
    };
    if s == 1.0 {
        return Ok(image);
    }
    let shape = image.shape();
    let (h, w) = (shape[1], shape[2]);
    let ay = rng.random_range(0.0..(h - 1) as f64);
    let ax = rng.random_range(0.0..(w - 1) as f64);
    let mut grid = Tensor::zeros(&[h, w, 2]);
    for i in 0..h {
        for j in 0..w {
            grid.set3(i, j, 0, ay + (i as f64 - ay) / s);
            grid.set3(i, j, 1, ax + (j as f64 - ax) / s);
        }
    }
    image.grid_sample(tape.constant(grid))
}

/// Outcome of one objective evaluation inside the update loop.
pub(crate) struct ObjectiveEval<'t> {
    pub loss: Var<'t>,
    pub trace_row: Vec<f64>,
}

/// Direction of the signed-gradient update.
#[derive(Clone, Copy, PartialEq)]
pub(crate) enum Goal {
    Minimize,
    Maximize,
}

/// Shared update core: T iterations of signed-gradient steps on an
/// objective of the adversarial image, with optional momentum and input
/// diversity, clipped to the feasible set each step.
pub(crate) fn pgd_loop<F>(
    image: &Tensor,
    start: Option<Tensor>,
    cfg: &AttackConfig,
    goal: Goal,
    columns: &'static [&'static str],
    mut objective: F,
) -> Result<(Tensor, LossTrace)>
where
    F: for<'t> FnMut(&'t Tape, Var<'t>, usize) -> Result<ObjectiveEval<'t>>,
{
    // T = 0 is the identity attack regardless of the start point
    let mut current = match start {
        Some(s) if cfg.steps > 0 => clip_step(&s, image, cfg.epsilon),
        _ => image.clone(),
    };
    let mut trace = LossTrace::new(columns);
    let mut momentum = MomentumAccumulator::new(cfg.momentum_mu);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step = match goal {
        Goal::Minimize => -cfg.alpha,
        Goal::Maximize => cfg.alpha,
    };
    for t in 0..cfg.steps {
        let tape = Tape::new();
        let adv = tape.leaf(current.clone());
        let probe = diversify(&tape, adv, cfg.input_diversity_prob, cfg.di_scale, &mut rng)?;
        let eval = objective(&tape, probe, t)?;
        let grads = tape.backward(eval.loss)?;
        let g = grads.wrt(adv);
        let dir = momentum.direction(&g);
        for (c, d) in current.data_mut().iter_mut().zip(&dir) {
            *c += step * d;
        }
        current = clip_step(&current, image, cfg.epsilon);
        let mut row = vec![(t + 1) as f64];
        row.extend(eval.trace_row);
        trace.push(row);
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::test_rng::uniform_tensor;

    #[test]
    fn clip_step_identity_when_unchanged() {
        let img = uniform_tensor(&[3, 4, 4], 0.0, 1.0, 80);
        let out = clip_step(&img, &img, 8.0 / 255.0);
        assert_eq!(out, img);
    }

    #[test]
    fn clip_step_saturates_at_epsilon() {
        let eps = 8.0 / 255.0;
        let img = uniform_tensor(&[3, 4, 4], 0.3, 0.6, 81);
        let mut cand = img.clone();
        for v in cand.data_mut() {
            *v += 2.0 * eps;
        }
        let out = clip_step(&cand, &img, eps);
        for (o, i) in out.data().iter().zip(img.data()) {
            assert!((o - (i + eps)).abs() < 1e-15);
        }
    }

    #[test]
    fn clip_step_enforces_both_boxes() {
        let eps = 0.1;
        let img = uniform_tensor(&[2, 3, 3], 0.0, 1.0, 82);
        let cand = uniform_tensor(&[2, 3, 3], -0.5, 1.5, 83);
        let out = clip_step(&cand, &img, eps);
        for (o, i) in out.data().iter().zip(img.data()) {
            assert!(*o >= i - eps - 1e-15 && *o <= i + eps + 1e-15);
            assert!((0.0..=1.0).contains(o));
        }
    }

    #[test]
    fn momentum_disabled_matches_plain_sign() {
        let g = uniform_tensor(&[10], -1.0, 1.0, 84);
        let mut acc = MomentumAccumulator::new(0.0);
        let dir = acc.direction(&g);
        for (d, &x) in dir.iter().zip(g.data()) {
            assert_eq!(*d, sign(x));
        }
    }

    #[test]
    fn momentum_constant_gradient_keeps_its_sign() {
        let g = uniform_tensor(&[10], -1.0, 1.0, 85);
        let mut acc = MomentumAccumulator::new(1.0);
        let mut dir = Vec::new();
        for _ in 0..5 {
            dir = acc.direction(&g);
        }
        for (d, &x) in dir.iter().zip(g.data()) {
            assert_eq!(*d, sign(x));
        }
    }

    #[test]
    fn diversify_identity_scale_is_untouched() {
        let img = uniform_tensor(&[3, 8, 8], 0.0, 1.0, 86);
        let tape = Tape::new();
        let iv = tape.constant(img.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = diversify(&tape, iv, 1.0, (1.0, 1.0), &mut rng).unwrap();
        assert!(out
            .value()
            .data()
            .iter()
            .zip(img.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn diversify_rescales_when_enabled() {
        let img = uniform_tensor(&[3, 8, 8], 0.0, 1.0, 87);
        let tape = Tape::new();
        let iv = tape.constant(img.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = diversify(&tape, iv, 1.0, (0.9, 1.1), &mut rng).unwrap();
        assert!(out.value().max_abs_diff(&img) > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        let bad = AttackConfig { alpha: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AttackConfig { alpha: 0.5, epsilon: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AttackConfig { epsilon: 1.5, alpha: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
