//! The two-stage attack: optimize a flow-field deformation of the image
//! into a structurally dissimilar but feature-reachable target, then pull
//! the adversarial example toward that target in feature space.

use super::{clip_step, pgd_loop, AttackConfig, AttackResult, Goal, LossTrace, ObjectiveEval, sign};
use crate::diffmath::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{control_loss, deformation_loss, fidelity_loss};
use crate::segmodel::Model;
use crate::warp::{composite_deform, identity_flow, make_filter_masks, FlowField};

static UAD_COLUMNS: [&str; 6] = ["iteration", "stage", "total", "l_d", "l_c", "l_f"];

/// Proxy adversarial sample: T_f signed-gradient steps pulling the proxy's
/// features toward the target's, clipped to the feasible set each step.
/// T_f = 0 returns the original image.
pub fn proxy_perturb(
    model: &Model,
    original: &Tensor,
    target: &Tensor,
    proxy_steps: usize,
    alpha: f64,
    epsilon: f64,
) -> Result<Tensor> {
    let f_target = model.features(target)?;
    let mut proxy = original.clone();
    for _ in 0..proxy_steps {
        let tape = Tape::new();
        let pv = tape.leaf(proxy.clone());
        let f_proxy = model.encode(&tape, pv)?;
        let loss = fidelity_loss(tape.constant(f_target.clone()), f_proxy)?;
        let g = tape.backward(loss)?.wrt(pv);
        for (p, &gv) in proxy.data_mut().iter_mut().zip(g.data()) {
            *p -= alpha * sign(gv);
        }
        proxy = clip_step(&proxy, original, epsilon);
    }
    Ok(proxy)
}

/// Stage one: gradient descent on K flow fields. Each iteration rebuilds
/// the composite deformed image, refreshes the proxy sample against it,
/// and steps the flows on SSIM + control + fidelity. Returns the final
/// deformed target (detached) with the flows and loss trace.
pub fn deformation_stage(
    model: &Model,
    image: &Tensor,
    cfg: &AttackConfig,
) -> Result<(Tensor, Vec<FlowField>, LossTrace)> {
    cfg.validate()?;
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Rank {
            op: "deformation_stage",
            detail: format!("want [C,H,W], got {:?}", s),
        });
    }
    let (h, w) = (s[1], s[2]);
    let masks = make_filter_masks(h, w, cfg.num_flow_fields, cfg.mask_blur_sigma)?;
    let mut flows: Vec<Tensor> =
        (0..cfg.num_flow_fields).map(|_| identity_flow(h, w).into_vectors()).collect();
    let mut trace = LossTrace::new(&UAD_COLUMNS);
    let wts = &cfg.weights;

    for t in 0..cfg.deform_steps {
        let tape = Tape::new();
        let img = tape.constant(image.clone());
        let flow_vars: Vec<_> = flows.iter().map(|f| tape.leaf(f.clone())).collect();
        let deformed = composite_deform(&tape, img, &flow_vars, &masks)?;

        // the proxy estimates how reachable the target is from inside the
        // epsilon ball; it is optimized on detached side tapes
        let proxy =
            proxy_perturb(model, image, &deformed.value(), cfg.proxy_steps, cfg.alpha, cfg.epsilon)?;
        let f_proxy = model.features(&proxy)?;

        let l_d = deformation_loss(deformed, img)?;
        let l_c = control_loss(&tape, &flow_vars, wts.lambda_tv, wts.lambda_var)?;
        let f_def = model.encode(&tape, deformed)?;
        let l_f = fidelity_loss(f_def, tape.constant(f_proxy))?;
        let loss = l_d.add(l_c.scale(wts.lambda_c))?.add(l_f.scale(wts.lambda_f))?;

        let grads = tape.backward(loss)?;
        for (flow, var) in flows.iter_mut().zip(&flow_vars) {
            let g = grads.wrt(*var);
            for (f, &gv) in flow.data_mut().iter_mut().zip(g.data()) {
                *f -= cfg.deform_step_size * gv;
            }
        }
        trace.push(vec![
            (t + 1) as f64,
            1.0,
            loss.item()?,
            l_d.item()?,
            l_c.item()?,
            l_f.item()?,
        ]);
    }

    // deformed target fixed at the end of stage one
    let tape = Tape::new();
    let img = tape.constant(image.clone());
    let flow_vars: Vec<_> = flows.iter().map(|f| tape.constant(f.clone())).collect();
    let deformed = composite_deform(&tape, img, &flow_vars, &masks)?.value();
    let flows = flows.into_iter().map(|f| FlowField::new(f).unwrap()).collect();
    Ok((deformed, flows, trace))
}

/// Stage two: T signed-gradient steps pulling the adversarial image toward
/// the fixed deformed target in feature space, pushing away from the
/// original when beta > 0. A model list averages the objective (ensemble).
pub fn simulation_stage(
    models: &[Model],
    image: &Tensor,
    deformed: &Tensor,
    cfg: &AttackConfig,
) -> Result<(Tensor, LossTrace)> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(Error::Config("simulation_stage needs at least one model".into()));
    }
    let beta = cfg.weights.beta_pushaway;
    // the deformed target and the original are fixed; their features are
    // constants of the optimization
    let f_def: Vec<Tensor> = models.iter().map(|m| m.features(deformed)).collect::<Result<_>>()?;
    let f_orig: Vec<Tensor> = if beta != 0.0 {
        models.iter().map(|m| m.features(image)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let (adv, trace) = pgd_loop(image, None, cfg, Goal::Minimize, &UAD_COLUMNS, |tape, probe, _t| {
        let mut total: Option<crate::diffmath::Var<'_>> = None;
        let mut pull_total = 0.0;
        for (mi, model) in models.iter().enumerate() {
            let f_adv = model.encode(tape, probe)?;
            let pull = fidelity_loss(tape.constant(f_def[mi].clone()), f_adv)?;
            pull_total += pull.item()?;
            let term = if beta == 0.0 {
                pull
            } else {
                let push = fidelity_loss(tape.constant(f_orig[mi].clone()), f_adv)?;
                pull.sub(push.scale(beta))?
            };
            total = Some(match total {
                None => term,
                Some(t) => t.add(term)?,
            });
        }
        let loss = total.expect("non-empty model list").scale(1.0 / models.len() as f64);
        let lv = loss.item()?;
        Ok(ObjectiveEval {
            loss,
            trace_row: vec![2.0, lv, 0.0, 0.0, pull_total / models.len() as f64],
        })
    })?;
    Ok((adv, trace))
}

/// The full two-stage attack: deformation on the first (source) model,
/// then feature simulation on every model in the list. Returns
/// r = adversarial - original with the deformed target attached.
pub fn uad_attack(models: &[Model], image: &Tensor, cfg: &AttackConfig) -> Result<AttackResult> {
    if models.is_empty() {
        return Err(Error::Config("uad_attack needs at least one model".into()));
    }
    let (deformed, _flows, mut trace) = deformation_stage(&models[0], image, cfg)?;
    let (adversarial, sim_trace) = simulation_stage(models, image, &deformed, cfg)?;
    trace.rows.extend(sim_trace.rows);
    let perturbation = Tensor::new(
        image.shape().to_vec(),
        adversarial.data().iter().zip(image.data()).map(|(a, o)| a - o).collect(),
    )?;
    Ok(AttackResult {
        perturbation,
        adversarial,
        deformed_target: Some(deformed),
        trace,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmodel::{build_model, generate_scene, ArchSpec};

    fn small_cfg() -> AttackConfig {
        AttackConfig {
            steps: 3,
            proxy_steps: 2,
            deform_steps: 3,
            ..Default::default()
        }
    }

    fn scene_image(seed: u64) -> Tensor {
        generate_scene(seed, 32, 32, 1).unwrap().image
    }

    #[test]
    fn proxy_zero_steps_returns_original() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let img = scene_image(1);
        let target = scene_image(2);
        let proxy = proxy_perturb(&model, &img, &target, 0, 2.0 / 255.0, 8.0 / 255.0).unwrap();
        assert_eq!(proxy, img);
    }

    #[test]
    fn proxy_respects_feasible_set() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let img = scene_image(3);
        let target = scene_image(4);
        let eps = 8.0 / 255.0;
        let proxy = proxy_perturb(&model, &img, &target, 4, 2.0 / 255.0, eps).unwrap();
        for (p, o) in proxy.data().iter().zip(img.data()) {
            assert!((p - o).abs() <= eps + 1e-9);
            assert!((0.0..=1.0).contains(p));
        }
    }

    #[test]
    fn deformation_zero_steps_is_identity() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let img = scene_image(5);
        let cfg = AttackConfig { deform_steps: 0, ..small_cfg() };
        let (deformed, flows, _) = deformation_stage(&model, &img, &cfg).unwrap();
        assert!(deformed.max_abs_diff(&img) < 1e-12);
        for f in flows {
            assert!(f.vectors().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn deformation_reduces_ssim_from_one() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let img = scene_image(6);
        let cfg = AttackConfig { deform_steps: 10, proxy_steps: 2, ..Default::default() };
        let (_deformed, _flows, trace) = deformation_stage(&model, &img, &cfg).unwrap();
        let first_ld = trace.rows.first().unwrap()[3];
        let last_ld = trace.rows.last().unwrap()[3];
        assert!((first_ld - 1.0).abs() < 1e-9, "initial L_D must be SSIM(I,I)=1");
        assert!(last_ld < first_ld, "L_D should fall: {} -> {}", first_ld, last_ld);
    }

    #[test]
    fn simulation_zero_steps_gives_zero_perturbation() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let img = scene_image(7);
        let target = scene_image(8);
        let cfg = AttackConfig { steps: 0, ..small_cfg() };
        let (adv, trace) = simulation_stage(std::slice::from_ref(&model), &img, &target, &cfg).unwrap();
        assert_eq!(adv, img);
        assert!(trace.rows.is_empty());
    }

    #[test]
    fn simulation_never_mutates_the_deformed_target() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let img = scene_image(9);
        let target = scene_image(10);
        let before: Vec<u64> = target.data().iter().map(|v| v.to_bits()).collect();
        let _ = simulation_stage(std::slice::from_ref(&model), &img, &target, &small_cfg()).unwrap();
        let after: Vec<u64> = target.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn uad_composes_the_two_stages_bit_exactly() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let img = scene_image(11);
        let cfg = small_cfg();
        let result = uad_attack(std::slice::from_ref(&model), &img, &cfg).unwrap();

        let (deformed, _f, _t) = deformation_stage(&model, &img, &cfg).unwrap();
        let (adv, _t2) = simulation_stage(std::slice::from_ref(&model), &img, &deformed, &cfg).unwrap();
        assert!(result
            .adversarial
            .data()
            .iter()
            .zip(adv.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(result
            .deformed_target
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .zip(deformed.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn uad_feasibility_and_determinism() {
        let model = build_model(0, ArchSpec::default()).unwrap();
        let img = scene_image(12);
        let cfg = small_cfg();
        let a = uad_attack(std::slice::from_ref(&model), &img, &cfg).unwrap();
        a.validate(&img).unwrap();
        let b = uad_attack(std::slice::from_ref(&model), &img, &cfg).unwrap();
        assert!(a
            .adversarial
            .data()
            .iter()
            .zip(b.adversarial.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn default_epsilon_matches_attack_settings() {
        let cfg = AttackConfig::default();
        assert!((cfg.epsilon - 8.0 / 255.0).abs() < 1e-15);
        assert!((cfg.alpha - 2.0 / 255.0).abs() < 1e-15);
        assert_eq!(cfg.steps, 40);
        assert_eq!(cfg.proxy_steps, 4);
        assert_eq!(cfg.deform_steps, 40);
    }
}
