use unseg::attacks::*;
use unseg::eval::*;
use unseg::segmodel::*;
use unseg::losses::ssim_value;

fn main() {
    let source = build_model(0, ArchSpec::default()).unwrap();
    let sc = generate_scene(1000, 64, 64, 2).unwrap();

    // per-prompt-kind clean quality
    let f = source.features(&sc.image).unwrap();
    let mut per_kind: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for gt in &sc.gt_masks {
        let prompts = sample_prompts(gt, 7).unwrap();
        for (pi, p) in prompts.iter().enumerate() {
            let pred = source.segment_with_features(&f, p, 64, 64).unwrap().binary();
            per_kind.entry(PROMPT_LABELS[pi]).or_default().push(iou(&pred, gt).unwrap());
        }
    }
    for (k, v) in &per_kind {
        let m: f64 = v.iter().sum::<f64>() / v.len() as f64;
        println!("{}: mean IoU vs GT = {:.3} ({:?})", k, m, v.iter().map(|x| (x*100.0).round()/100.0).collect::<Vec<_>>());
    }

    for step in [1.0, 10.0, 50.0] {
        let cfg = AttackConfig { deform_step_size: step, deform_steps: 40, ..Default::default() };
        let (deformed, _fl, trace) = deformation_stage(&source, &sc.image, &cfg).unwrap();
        let first = &trace.rows[0];
        let last = trace.rows.last().unwrap();
        println!("step={}: l_d {:.4}->{:.4} l_c {:.4}->{:.4} l_f {:.4}->{:.4} | ssim(def,orig)={:.4}",
            step, first[3], last[3], first[4], last[4], first[5], last[5],
            ssim_value(&deformed, &sc.image).unwrap());
    }
}
