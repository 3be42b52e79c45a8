use unseg::attacks::*;
use unseg::eval::*;
use unseg::losses::{ssim_value, LossWeights};
use unseg::segmodel::*;

fn vec_cos(a: &unseg::diffmath::Tensor, b: &unseg::diffmath::Tensor) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let na: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let source = build_model(0, ArchSpec::default()).unwrap();
    let target = build_model(1, ArchSpec::default()).unwrap();
    let scenes: Vec<Scene> =
        (0..n).map(|i| generate_scene(1000 + i as u64, 64, 64, 2).unwrap()).collect();
    let clean: Vec<_> = scenes.iter().map(|s| s.image.clone()).collect();

    // clean quality snapshot
    let mut q = Vec::new();
    for sc in &scenes {
        let f = source.features(&sc.image).unwrap();
        for gt in &sc.gt_masks {
            for p in &sample_prompts(gt, 7).unwrap() {
                let pred = source.segment_with_features(&f, p, 64, 64).unwrap().binary();
                q.push(iou(&pred, gt).unwrap());
            }
        }
    }
    println!("clean quality = {:.3}", q.iter().sum::<f64>() / q.len() as f64);

    let score = |adv: &Vec<unseg::diffmath::Tensor>| {
        evaluate(std::slice::from_ref(&source), &scenes, adv, 7).unwrap().per_model[0].miou_mean
    };
    let tsim = |adv: &Vec<unseg::diffmath::Tensor>| {
        feature_similarity_histogram(&source, &target, &clean, adv, 20).unwrap().target_mean
    };

    let mut tap_adv = Vec::new();
    let mut aa_adv = Vec::new();
    for (i, sc) in scenes.iter().enumerate() {
        let mut c = AttackConfig::default();
        c.seed = mix_seed(0, i as u64, 0);
        tap_adv.push(tap_attack(&source, &sc.image, &c).unwrap().adversarial);
        aa_adv.push(aa_attack(&source, &sc.image, &scenes[(i + 1) % n].image, &c).unwrap().adversarial);
    }
    println!("tap mIoU={:.4} tsim={:.4} | aa mIoU={:.4} tsim={:.4}",
             score(&tap_adv), tsim(&tap_adv), score(&aa_adv), tsim(&aa_adv));

    for k in [4usize, 16] {
        for ds in [2000.0, 4000.0] {
            let lf = 5.0;
            let mut uad_adv = Vec::new();
            let (mut r0m, mut r4m, mut wins) = (0.0, 0.0, 0);
            let (mut ssim_m, mut cos_m) = (0.0, 0.0);
            for (i, sc) in scenes.iter().enumerate() {
                let mut c = AttackConfig {
                    deform_step_size: ds,
                    num_flow_fields: k,
                    weights: LossWeights { lambda_f: lf, ..Default::default() },
                    ..Default::default()
                };
                c.seed = mix_seed(0, i as u64, 0);
                let r = uad_attack(std::slice::from_ref(&source), &sc.image, &c).unwrap();
                let def = r.deformed_target.clone().unwrap();
                ssim_m += ssim_value(&def, &sc.image).unwrap() / n as f64;
                cos_m += vec_cos(&source.features(&sc.image).unwrap(), &source.features(&def).unwrap()) / n as f64;
                let v4 = relative_feature_similarity(&source, &sc.image, &def, &r.adversarial).unwrap();
                uad_adv.push(r.adversarial);
                let mut c0 = c.clone();
                c0.proxy_steps = 0;
                let r0 = uad_attack(std::slice::from_ref(&source), &sc.image, &c0).unwrap();
                let v0 = relative_feature_similarity(&source, &sc.image, r0.deformed_target.as_ref().unwrap(), &r0.adversarial).unwrap();
                r0m += v0 / n as f64;
                r4m += v4 / n as f64;
                if v4 > v0 { wins += 1; }
            }
            println!("K={} ds={}: uad mIoU={:.4} tsim={:.4} | ssim(def)={:.3} cos={:.3} | rel {:.4}->{:.4} wins {}/{}",
                     k, ds, score(&uad_adv), tsim(&uad_adv), ssim_m, cos_m, r0m, r4m, wins, n);
        }
    }
}
