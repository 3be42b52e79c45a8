//! Comparison attacks: untargeted feature disruption, targeted feature
//! simulation with and without dominance regularization, and the
//! grid-prompt logit-suppression attack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pgd_loop, AttackConfig, AttackResult, Goal, ObjectiveEval};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::losses::fidelity_loss;
use crate::segmodel::{Model, Prompt};

fn result_from(image: &Tensor, adversarial: Tensor, trace: super::LossTrace, cfg: &AttackConfig) -> Result<AttackResult> {
    let perturbation = Tensor::new(
        image.shape().to_vec(),
        adversarial.data().iter().zip(image.data()).map(|(a, o)| a - o).collect(),
    )?;
    Ok(AttackResult {
        perturbation,
        adversarial,
        deformed_target: None,
        trace,
        config: cfg.clone(),
    })
}

/// Untargeted feature disruption: drive adversarial features away from the
/// original features in L2 distance (maximized).
pub fn tap_attack(model: &Model, image: &Tensor, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let f_clean = model.features(image)?;
    // the distance gradient vanishes exactly at r = 0; a seeded random
    // start inside the step ball breaks the symmetry
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x746170);
    let mut start = image.clone();
    for v in start.data_mut() {
        *v += rng.random_range(-cfg.alpha..cfg.alpha);
    }
    static COLS: [&str; 2] = ["iteration", "feature_distance"];
    let (adv, trace) = pgd_loop(image, Some(start), cfg, Goal::Maximize, &COLS, |tape, probe, _t| {
        let f_adv = model.encode(tape, probe)?;
        let d = f_adv.sub(tape.constant(f_clean.clone()))?;
        let dist = d.mul(d)?.sum().sqrt_smooth();
        let dv = dist.item()?;
        Ok(ObjectiveEval { loss: dist, trace_row: vec![dv] })
    })?;
    result_from(image, adv, trace, cfg)
}

/// Targeted feature attack: minimize the fidelity loss between the
/// adversarial features and a fixed natural target image's features.
pub fn aa_attack(
    model: &Model,
    image: &Tensor,
    target_image: &Tensor,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let f_target = model.features(target_image)?;
    static COLS: [&str; 2] = ["iteration", "fidelity_to_target"];
    let (adv, trace) = pgd_loop(image, None, cfg, Goal::Minimize, &COLS, |tape, probe, _t| {
        let f_adv = model.encode(tape, probe)?;
        let loss = fidelity_loss(tape.constant(f_target.clone()), f_adv)?;
        let lv = loss.item()?;
        Ok(ObjectiveEval { loss, trace_row: vec![lv] })
    })?;
    result_from(image, adv, trace, cfg)
}

/// Targeted attack with a feature-dominance regularizer: additionally push
/// the adversarial features away from a clean competition image. The
/// plus-plus variant resamples the competition image from the pool every
/// iteration.
pub fn pata_attack(
    model: &Model,
    image: &Tensor,
    target_image: &Tensor,
    competition: &[Tensor],
    plus_plus: bool,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    if competition.is_empty() {
        return Err(Error::Config("pata_attack needs at least one competition image".into()));
    }
    let f_target = model.features(target_image)?;
    let f_comp: Vec<Tensor> =
        competition.iter().map(|c| model.features(c)).collect::<Result<_>>()?;
    let lambda_dom = cfg.pata_lambda_dom;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x70617461);
    static COLS: [&str; 3] = ["iteration", "total", "fidelity_to_target"];
    let (adv, trace) = pgd_loop(image, None, cfg, Goal::Minimize, &COLS, |tape, probe, _t| {
        let f_adv = model.encode(tape, probe)?;
        let pull = fidelity_loss(tape.constant(f_target.clone()), f_adv)?;
        let pv = pull.item()?;
        // lambda_dom == 0 degenerates to the plain targeted attack,
        // trajectory bit-identical
        let loss = if lambda_dom == 0.0 {
            pull
        } else {
            let idx = if plus_plus { rng.random_range(0..f_comp.len()) } else { 0 };
            let dom = fidelity_loss(tape.constant(f_comp[idx].clone()), f_adv)?;
            pull.sub(dom.scale(lambda_dom))?
        };
        let lv = loss.item()?;
        Ok(ObjectiveEval { loss, trace_row: vec![lv, pv] })
    })?;
    result_from(image, adv, trace, cfg)
}

/// The uniform point-prompt grid used by the grid-prompt attack; K rounds
/// down to the nearest square with a warning.
pub fn sam_grid_prompts(h: usize, w: usize, k: usize) -> (Vec<Prompt>, usize) {
    let side = (k as f64).sqrt().floor() as usize;
    let side = side.max(1);
    let effective = side * side;
    if effective != k {
        log::warn!("attack_sam_k: K={} is not a square, using {} grid prompts", k, effective);
    }
    let mut prompts = Vec::with_capacity(effective);
    for i in 0..side {
        for j in 0..side {
            let y = ((i as f64 + 0.5) * h as f64 / side as f64).min((h - 1) as f64);
            let x = ((j as f64 + 0.5) * w as f64 / side as f64).min((w - 1) as f64);
            prompts.push(Prompt::point(y, x));
        }
    }
    (prompts, effective)
}

/// Grid-prompt logit suppression: drive the positive mask logits of K grid
/// point prompts negative, invalidating the ensembled prompts.
pub fn attack_sam_k(model: &Model, image: &Tensor, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let s = image.shape();
    let (prompts, _k) = sam_grid_prompts(s[1], s[2], cfg.sam_prompts);
    static COLS: [&str; 2] = ["iteration", "positive_logit_mass"];
    let (adv, trace) = pgd_loop(image, None, cfg, Goal::Minimize, &COLS, |tape, probe, _t| {
        let features = model.encode(tape, probe)?;
        let mut total: Option<crate::diffmath::Var<'_>> = None;
        for prompt in &prompts {
            let emb = model.encode_prompt(tape, features, prompt, s[1], s[2])?;
            let logits = model.decode(tape, features, emb, s[1], s[2])?;
            let term = logits.relu().mean();
            total = Some(match total {
                None => term,
                Some(t) => t.add(term)?,
            });
        }
        let loss = total.expect("at least one prompt");
        let lv = loss.item()?;
        Ok(ObjectiveEval { loss, trace_row: vec![lv] })
    })?;
    result_from(image, adv, trace, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmodel::{build_model, generate_scene, ArchSpec};

    fn quick_cfg() -> AttackConfig {
        AttackConfig { steps: 3, ..Default::default() }
    }

    fn img(seed: u64) -> Tensor {
        generate_scene(seed, 32, 32, 1).unwrap().image
    }

    #[test]
    fn tap_zero_steps_is_identity() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let cfg = AttackConfig { steps: 0, ..Default::default() };
        let r = tap_attack(&model, &img(1), &cfg).unwrap();
        assert!(r.perturbation.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tap_increases_feature_distance() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let cfg = AttackConfig { steps: 6, ..Default::default() };
        let r = tap_attack(&model, &img(2), &cfg).unwrap();
        let dists: Vec<f64> = r.trace.rows.iter().map(|row| row[1]).collect();
        for t in 1..5 {
            assert!(dists[t] > dists[t - 1], "distance trace not increasing: {:?}", dists);
        }
        r.validate(&img(2)).unwrap();
    }

    #[test]
    fn aa_moves_toward_target_features() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let cfg = AttackConfig { steps: 6, ..Default::default() };
        let origin = img(3);
        let target = img(4);
        let r = aa_attack(&model, &origin, &target, &cfg).unwrap();
        let fids: Vec<f64> = r.trace.rows.iter().map(|row| row[1]).collect();
        assert!(
            fids.last().unwrap() < fids.first().unwrap(),
            "fidelity did not fall: {:?}",
            fids
        );
        r.validate(&origin).unwrap();
    }

    #[test]
    fn aa_on_its_own_image_starts_at_zero() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let origin = img(5);
        let r = aa_attack(&model, &origin, &origin, &quick_cfg()).unwrap();
        assert!(r.trace.rows[0][1].abs() < 1e-9);
        r.validate(&origin).unwrap();
    }

    #[test]
    fn pata_zero_dominance_equals_aa_bit_exactly() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let origin = img(6);
        let target = img(7);
        let comp = vec![img(8)];
        let cfg = AttackConfig { pata_lambda_dom: 0.0, steps: 4, ..Default::default() };
        let a = aa_attack(&model, &origin, &target, &cfg).unwrap();
        let p = pata_attack(&model, &origin, &target, &comp, false, &cfg).unwrap();
        assert!(a
            .adversarial
            .data()
            .iter()
            .zip(p.adversarial.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn pata_plus_plus_single_pool_matches_plain() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let origin = img(9);
        let target = img(10);
        let comp = vec![img(11)];
        let cfg = AttackConfig { steps: 4, ..Default::default() };
        let plain = pata_attack(&model, &origin, &target, &comp, false, &cfg).unwrap();
        let pp = pata_attack(&model, &origin, &target, &comp, true, &cfg).unwrap();
        assert!(plain
            .adversarial
            .data()
            .iter()
            .zip(pp.adversarial.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        pp.validate(&origin).unwrap();
    }

    #[test]
    fn sam_grid_rounds_down_to_square() {
        let (prompts, k) = sam_grid_prompts(64, 64, 400);
        assert_eq!(k, 400);
        assert_eq!(prompts.len(), 400);
        let (prompts, k) = sam_grid_prompts(64, 64, 10);
        assert_eq!(k, 9);
        assert_eq!(prompts.len(), 9);
    }

    #[test]
    fn sam_k_single_prompt_is_center_attack() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let origin = img(12);
        let cfg = AttackConfig { sam_prompts: 1, steps: 3, ..Default::default() };
        let r = attack_sam_k(&model, &origin, &cfg).unwrap();
        r.validate(&origin).unwrap();
        let (prompts, k) = sam_grid_prompts(32, 32, 1);
        assert_eq!(k, 1);
        match &prompts[0] {
            Prompt::Points(ps) => {
                assert!((ps[0].y - 16.0).abs() < 1.0 && (ps[0].x - 16.0).abs() < 1.0);
            }
            _ => panic!("expected a point prompt"),
        }
    }

    #[test]
    fn sam_k_suppresses_positive_logits() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let origin = img(13);
        let cfg = AttackConfig { sam_prompts: 16, steps: 6, ..Default::default() };
        let r = attack_sam_k(&model, &origin, &cfg).unwrap();
        let mass: Vec<f64> = r.trace.rows.iter().map(|row| row[1]).collect();
        assert!(
            mass.last().unwrap() < mass.first().unwrap(),
            "positive logit mass did not fall: {:?}",
            mass
        );
        r.validate(&origin).unwrap();
    }
}
