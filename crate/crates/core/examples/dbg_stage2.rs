use unseg::attacks::*;
use unseg::eval::*;
use unseg::losses::ssim_value;
use unseg::segmodel::*;

fn main() {
    let source = build_model(0, ArchSpec::default()).unwrap();
    let sc = generate_scene(1000, 64, 64, 2).unwrap();

    for step in [200.0, 1000.0, 5000.0] {
        let cfg = AttackConfig { deform_step_size: step, deform_steps: 40, ..Default::default() };
        let (deformed, _fl, trace) = deformation_stage(&source, &sc.image, &cfg).unwrap();
        let mid = &trace.rows[19];
        let last = trace.rows.last().unwrap();
        println!(
            "step={}: l_d@20 {:.4} l_d@40 {:.4} l_c@40 {:.4} l_f@40 {:.4} | ssim={:.4}",
            step, mid[3], last[3], last[4], last[5],
            ssim_value(&deformed, &sc.image).unwrap()
        );
    }

    // mask bleed: visualize GT vs prediction for a center point prompt
    let f = source.features(&sc.image).unwrap();
    let gt = &sc.gt_masks[0];
    // centroid prompt
    let (mut cy, mut cx, mut n) = (0.0, 0.0, 0.0);
    for i in 0..64 {
        for j in 0..64 {
            if gt.get(i, j) {
                cy += i as f64;
                cx += j as f64;
                n += 1.0;
            }
        }
    }
    let p = Prompt::point((cy / n).round(), (cx / n).round());
    let pred = source.segment_with_features(&f, &p, 64, 64).unwrap().binary();
    println!("centroid prompt IoU vs GT = {:.3}", iou(&pred, gt).unwrap());
    for i in (0..64).step_by(2) {
        let row: String = (0..64)
            .step_by(1)
            .map(|j| match (gt.get(i, j), pred.get(i, j)) {
                (true, true) => '#',
                (true, false) => '-',
                (false, true) => '+',
                (false, false) => '.',
            })
            .collect();
        println!("{}", row);
    }
}
