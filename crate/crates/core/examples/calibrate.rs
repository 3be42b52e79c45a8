use std::time::Instant;
use unseg::attacks::*;
use unseg::eval::*;
use unseg::segmodel::*;

fn main() {
    let n_scenes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let source = build_model(0, ArchSpec::default()).unwrap();
    let target = build_model(1, ArchSpec::default()).unwrap();
    let scenes: Vec<Scene> =
        (0..n_scenes).map(|i| generate_scene(1000 + i as u64, 64, 64, 2).unwrap()).collect();

    // clean quality vs GT
    let mut q = Vec::new();
    for sc in &scenes {
        let f = source.features(&sc.image).unwrap();
        for gt in &sc.gt_masks {
            let prompts = sample_prompts(gt, 7).unwrap();
            for p in &prompts {
                let pred = source.segment_with_features(&f, p, 64, 64).unwrap().binary();
                q.push(iou(&pred, gt).unwrap());
            }
        }
    }
    let mean_q: f64 = q.iter().sum::<f64>() / q.len() as f64;
    println!("clean quality vs GT: mIoU = {:.3} over {} pairs", mean_q, q.len());

    let cfg = AttackConfig::default();
    let t0 = Instant::now();

    let mut uad_res = Vec::new();
    let mut tap_res = Vec::new();
    let mut aa_res = Vec::new();
    for (i, sc) in scenes.iter().enumerate() {
        let mut c = cfg.clone();
        c.seed = mix_seed(0, i as u64, 0);
        let t = Instant::now();
        uad_res.push(uad_attack(std::slice::from_ref(&source), &sc.image, &c).unwrap());
        if i == 0 { println!("uad per-scene: {:.2?}", t.elapsed()); }
        let t = Instant::now();
        tap_res.push(tap_attack(&source, &sc.image, &c).unwrap());
        if i == 0 { println!("tap per-scene: {:.2?}", t.elapsed()); }
        let target_img = &scenes[(i + 1) % scenes.len()].image;
        let t = Instant::now();
        aa_res.push(aa_attack(&source, &sc.image, target_img, &c).unwrap());
        if i == 0 { println!("aa per-scene: {:.2?}", t.elapsed()); }
    }
    println!("attacks done in {:.2?}", t0.elapsed());

    let adv =
        |rs: &Vec<AttackResult>| rs.iter().map(|r| r.adversarial.clone()).collect::<Vec<_>>();
    for (name, rs) in [("uad", &uad_res), ("tap", &tap_res), ("aa", &aa_res)] {
        let rep = evaluate(std::slice::from_ref(&source), &scenes, &adv(rs), 7).unwrap();
        let m = &rep.per_model[0];
        println!("{}: source mIoU={:.4} asr50={:.3} asr10={:.3}", name, m.miou_mean, m.asr50, m.asr10);
    }

    // transferability: mean target-model feature similarity
    for (name, rs) in [("uad", &uad_res), ("tap", &tap_res), ("aa", &aa_res)] {
        let clean: Vec<_> = scenes.iter().map(|s| s.image.clone()).collect();
        let fs = feature_similarity_histogram(&source, &target, &clean, &adv(rs), 20).unwrap();
        println!("{}: source sim={:.4} target sim={:.4}", name, fs.source_mean, fs.target_mean);
    }

    // proxy ablation: relative feature similarity with T_f in {0,4,8}
    let mut wins = 0;
    let mut means = [0.0f64; 3];
    for (i, sc) in scenes.iter().enumerate() {
        let mut vals = [0.0f64; 3];
        for (k, tf) in [0usize, 4, 8].iter().enumerate() {
            let mut c = cfg.clone();
            c.proxy_steps = *tf;
            c.seed = mix_seed(0, i as u64, 0);
            let r = uad_attack(std::slice::from_ref(&source), &sc.image, &c).unwrap();
            vals[k] = relative_feature_similarity(
                &source, &sc.image, r.deformed_target.as_ref().unwrap(), &r.adversarial).unwrap();
        }
        println!("scene {}: rel sim T_f=0:{:.4} T_f=4:{:.4} T_f=8:{:.4}", i, vals[0], vals[1], vals[2]);
        if vals[1] > vals[0] { wins += 1; }
        for k in 0..3 { means[k] += vals[k] / n_scenes as f64; }
    }
    println!("proxy: T_f=4 beats T_f=0 on {}/{} scenes; means {:?}", wins, n_scenes, means);
    println!("total {:.2?}", t0.elapsed());
}
