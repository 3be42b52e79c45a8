use unseg::attacks::*;
use unseg::eval::*;
use unseg::losses::LossWeights;
use unseg::segmodel::*;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let source = build_model(0, ArchSpec::default()).unwrap();
    let scenes: Vec<Scene> =
        (0..n).map(|i| generate_scene(1000 + i as u64, 64, 64, 2).unwrap()).collect();

    // reference points: TAP and AA source mIoU
    let mut tap_adv = Vec::new();
    let mut aa_adv = Vec::new();
    for (i, sc) in scenes.iter().enumerate() {
        let mut c = AttackConfig::default();
        c.seed = mix_seed(0, i as u64, 0);
        tap_adv.push(tap_attack(&source, &sc.image, &c).unwrap().adversarial);
        aa_adv.push(
            aa_attack(&source, &sc.image, &scenes[(i + 1) % n].image, &c).unwrap().adversarial,
        );
    }
    let score = |adv: &Vec<unseg::diffmath::Tensor>| {
        evaluate(std::slice::from_ref(&source), &scenes, adv, 7).unwrap().per_model[0].miou_mean
    };
    println!("tap mIoU={:.4}  aa mIoU={:.4}", score(&tap_adv), score(&aa_adv));

    for beta in [1.0, 0.0] {
        for lf in [1.0, 5.0, 20.0] {
            let mut uad_adv = Vec::new();
            let mut rel0 = 0.0;
            let mut rel4 = 0.0;
            let mut wins = 0;
            for (i, sc) in scenes.iter().enumerate() {
                let mut c = AttackConfig {
                    weights: LossWeights { lambda_f: lf, beta_pushaway: beta, ..Default::default() },
                    ..Default::default()
                };
                c.seed = mix_seed(0, i as u64, 0);
                let r = uad_attack(std::slice::from_ref(&source), &sc.image, &c).unwrap();
                let v4 = relative_feature_similarity(
                    &source, &sc.image, r.deformed_target.as_ref().unwrap(), &r.adversarial).unwrap();
                uad_adv.push(r.adversarial);
                let mut c0 = c.clone();
                c0.proxy_steps = 0;
                let r0 = uad_attack(std::slice::from_ref(&source), &sc.image, &c0).unwrap();
                let v0 = relative_feature_similarity(
                    &source, &sc.image, r0.deformed_target.as_ref().unwrap(), &r0.adversarial).unwrap();
                rel0 += v0 / n as f64;
                rel4 += v4 / n as f64;
                if v4 > v0 { wins += 1; }
            }
            println!(
                "beta={} lambda_f={}: uad mIoU={:.4} | rel sim T_f=0:{:.4} T_f=4:{:.4} wins {}/{}",
                beta, lf, score(&uad_adv), rel0, rel4, wins, n
            );
        }
    }
}
