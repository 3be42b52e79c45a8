//! Metrics and evaluation protocol: IoU between clean and adversarial
//! predictions under shared prompts, aggregated as mIoU / ASR@50 / ASR@10,
//! plus the feature-similarity diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::segmodel::{BinaryMask, Model, Prompt, Scene};

/// Labels for the eight prompts produced per ground-truth mask, in order.
pub const PROMPT_LABELS: [&str; 8] =
    ["point0", "point1", "point2", "point3", "point4", "box100", "box80", "box120"];

/// splitmix64 step; used to derive stable per-(scene, mask) seeds.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E3779B97F4A7C15) ^ b.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Intersection over union of two binary masks. Both-empty is defined as 1
/// (an unchanged empty prediction is not a successful attack).
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Dimension {
            op: "iou",
            detail: format!(
                "{}x{} vs {}x{}",
                a.height(),
                a.width(),
                b.height(),
                b.width()
            ),
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Sample the evaluation prompts for one ground-truth mask: 5 foreground
/// points uniform over the mask support, then the tight bounding box at
/// 100%, 80% and 120% scale about its center (clipped to the image).
pub fn sample_prompts(gt_mask: &BinaryMask, seed: u64) -> Result<Vec<Prompt>> {
    let support: Vec<(usize, usize)> = (0..gt_mask.height())
        .flat_map(|i| (0..gt_mask.width()).map(move |j| (i, j)))
        .filter(|&(i, j)| gt_mask.get(i, j))
        .collect();
    if support.is_empty() {
        return Err(Error::Prompt("cannot sample prompts from an empty mask".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prompts = Vec::with_capacity(8);
    for _ in 0..5 {
        let (y, x) = support[rng.random_range(0..support.len())];
        prompts.push(Prompt::point(y as f64, x as f64));
    }

    // tight bounding box, inclusive coordinates
    let (mut ry0, mut ry1, mut rx0, mut rx1) = (usize::MAX, 0usize, usize::MAX, 0usize);
    for &(i, j) in &support {
        ry0 = ry0.min(i);
        ry1 = ry1.max(i);
        rx0 = rx0.min(j);
        rx1 = rx1.max(j);
    }
    let (h, w) = (gt_mask.height(), gt_mask.width());
    let cy = (ry0 + ry1 + 1) as f64 / 2.0;
    let cx = (rx0 + rx1 + 1) as f64 / 2.0;
    let hh = (ry1 + 1 - ry0) as f64 / 2.0;
    let hw = (rx1 + 1 - rx0) as f64 / 2.0;
    for scale in [1.0f64, 0.8, 1.2] {
        let y0 = ((cy - hh * scale).round().max(0.0)) as usize;
        let x0 = ((cx - hw * scale).round().max(0.0)) as usize;
        let y1 = ((cy + hh * scale).round() as usize).clamp(y0 + 1, h);
        let x1 = ((cx + hw * scale).round() as usize).clamp(x0 + 1, w);
        let y0 = y0.min(y1 - 1);
        let x0 = x0.min(x1 - 1);
        prompts.push(Prompt::Box { y0, x0, y1, x1 });
    }
    Ok(prompts)
}

/// One scored (scene, mask, prompt, model) combination.
#[derive(Debug, Clone)]
pub struct IouRow {
    pub scene: usize,
    pub mask: usize,
    pub prompt: &'static str,
    pub model: String,
    pub iou: f64,
}

/// Aggregate metrics for one model.
#[derive(Debug, Clone)]
pub struct ModelMetrics {
    pub model: String,
    pub miou_mean: f64,
    /// Population std over all (mask, prompt) pairs.
    pub miou_std: f64,
    pub asr50: f64,
    pub asr10: f64,
    pub count: usize,
}

/// Full evaluation output: per-model aggregates plus the flat row table.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_model: Vec<ModelMetrics>,
    pub rows: Vec<IouRow>,
    pub prompt_seed: u64,
}

pub(crate) fn aggregate(model: &str, ious: &[f64]) -> ModelMetrics {
    let n = ious.len().max(1) as f64;
    let mean = ious.iter().sum::<f64>() / n;
    let var = ious.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // strict thresholds: IoU exactly 0.5 does not count toward ASR@50
    let asr50 = ious.iter().filter(|&&v| v < 0.5).count() as f64 / n;
    let asr10 = ious.iter().filter(|&&v| v < 0.1).count() as f64 / n;
    ModelMetrics {
        model: model.to_string(),
        miou_mean: mean,
        miou_std: var.sqrt(),
        asr50,
        asr10,
        count: ious.len(),
    }
}

/// Score adversarial images: for each model, mask and prompt, the IoU
/// between the mask predicted on the clean image and on the adversarial
/// image under the same prompt.
pub fn evaluate(
    models: &[Model],
    scenes: &[Scene],
    adversarial: &[Tensor],
    prompt_seed: u64,
) -> Result<MetricsReport> {
    if scenes.len() != adversarial.len() {
        return Err(Error::Config(format!(
            "{} scenes but {} adversarial images",
            scenes.len(),
            adversarial.len()
        )));
    }
    let mut rows = Vec::new();
    let mut per_model = Vec::new();
    for model in models {
        let label = model.label();
        let mut ious = Vec::new();
        for (si, (scene, adv)) in scenes.iter().zip(adversarial).enumerate() {
            let (h, w) = (scene.image.shape()[1], scene.image.shape()[2]);
            let f_clean = model.features(&scene.image)?;
            let f_adv = model.features(adv)?;
            for (mi, gt) in scene.gt_masks.iter().enumerate() {
                let prompts = sample_prompts(gt, mix_seed(prompt_seed, si as u64, mi as u64))?;
                for (pi, prompt) in prompts.iter().enumerate() {
                    let m_clean = model.segment_with_features(&f_clean, prompt, h, w)?;
                    let m_adv = model.segment_with_features(&f_adv, prompt, h, w)?;
                    let v = iou(&m_clean.binary(), &m_adv.binary())?;
                    ious.push(v);
                    rows.push(IouRow {
                        scene: si,
                        mask: mi,
                        prompt: PROMPT_LABELS[pi],
                        model: label.clone(),
                        iou: v,
                    });
                }
            }
        }
        per_model.push(aggregate(&label, &ious));
    }
    Ok(MetricsReport { per_model, rows, prompt_seed })
}

impl MetricsReport {
    /// One record per model: mIoU mean, mIoU std, asr50, asr10.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("prompt_seed = {}\n", self.prompt_seed));
        for m in &self.per_model {
            out.push_str(&format!(
                "model = {} | miou_mean = {:.6} | miou_std = {:.6} | asr50 = {:.6} | asr10 = {:.6} | pairs = {}\n",
                m.model, m.miou_mean, m.miou_std, m.asr50, m.asr10, m.count
            ));
        }
        out
    }

    /// Flat CSV of per-mask rows.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("scene,mask,prompt,model,iou\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.12}\n",
                r.scene, r.mask, r.prompt, r.model, r.iou
            ));
        }
        out
    }
}

fn vec_cosine(a: &Tensor, b: &Tensor) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let na: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Histograms of per-image feature similarity between clean and
/// adversarial images, on the source and on the target model.
#[derive(Debug, Clone)]
pub struct FeatureSimilarity {
    pub source_mean: f64,
    pub target_mean: f64,
    pub source_hist: Vec<usize>,
    pub target_hist: Vec<usize>,
    /// Bin edges span [-1, 1].
    pub bins: usize,
}

pub fn feature_similarity_histogram(
    source: &Model,
    target: &Model,
    clean: &[Tensor],
    adversarial: &[Tensor],
    bins: usize,
) -> Result<FeatureSimilarity> {
    if clean.len() != adversarial.len() {
        return Err(Error::Config(format!(
            "{} clean images but {} adversarial images",
            clean.len(),
            adversarial.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut out = FeatureSimilarity {
        source_mean: 0.0,
        target_mean: 0.0,
        source_hist: vec![0; bins],
        target_hist: vec![0; bins],
        bins,
    };
    for (model, mean, hist) in [
        (source, &mut out.source_mean, &mut out.source_hist),
        (target, &mut out.target_mean, &mut out.target_hist),
    ] {
        for (c, a) in clean.iter().zip(adversarial) {
            let sim = vec_cosine(&model.features(c)?, &model.features(a)?);
            *mean += sim;
            let idx = (((sim + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
            hist[idx] += 1;
        }
        *mean /= clean.len().max(1) as f64;
    }
    Ok(out)
}

/// cos(f(adversarial), f(deformed)) - cos(f(adversarial), f(original)):
/// how much closer the adversarial image sits to the deformed target than
/// to the original, in feature space.
pub fn relative_feature_similarity(
    model: &Model,
    original: &Tensor,
    deformed: &Tensor,
    adversarial: &Tensor,
) -> Result<f64> {
    let f_adv = model.features(adversarial)?;
    let f_def = model.features(deformed)?;
    let f_orig = model.features(original)?;
    Ok(vec_cosine(&f_adv, &f_def) - vec_cosine(&f_adv, &f_orig))
}
