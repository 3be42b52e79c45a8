//! Self-contained toy promptable segmentation model: a seeded random conv
//! encoder, a geometric prompt encoder, and a cosine-correlation mask
//! decoder. Untrained by design — random projections approximately preserve
//! color/texture distances, so flat synthetic regions segment correctly
//! while everything stays deterministic and differentiable.

mod scene;

pub use scene::{generate_scene, Scene};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Spatial reduction factor of the encoder (two stride-2 stages).
pub const FEATURE_STRIDE: usize = 4;

/// Encoder depth and channel width descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    /// Number of conv layers; the first two have stride 2.
    pub depth: usize,
    /// Channel width of every layer past the input.
    pub channels: usize,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if ![2, 3, 4].contains(&self.depth) {
            return Err(Error::Config(format!("unsupported depth {} (want 2, 3 or 4)", self.depth)));
        }
        if ![8, 16, 32].contains(&self.channels) {
            return Err(Error::Config(format!(
                "unsupported channel width {} (want 8, 16 or 32)",
                self.channels
            )));
        }
        Ok(())
    }
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec { depth: 3, channels: 16 }
    }
}

/// Spatial prompt: labelled point(s) or a half-open pixel box.
#[derive(Debug, Clone, PartialEq)]
pub enum Prompt {
    Points(Vec<PromptPoint>),
    /// Half-open pixel ranges: rows y0..y1, columns x0..x1.
    Box { y0: usize, x0: usize, y1: usize, x1: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptPoint {
    pub y: f64,
    pub x: f64,
    pub foreground: bool,
}

impl Prompt {
    pub fn point(y: f64, x: f64) -> Prompt {
        Prompt::Points(vec![PromptPoint { y, x, foreground: true }])
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        match self {
            Prompt::Points(ps) => {
                if ps.is_empty() {
                    return Err(Error::Prompt("empty point list".into()));
                }
                for p in ps {
                    if p.y < 0.0 || p.x < 0.0 || p.y > (h - 1) as f64 || p.x > (w - 1) as f64 {
                        return Err(Error::Prompt(format!(
                            "point ({}, {}) outside {}x{} image",
                            p.y, p.x, h, w
                        )));
                    }
                }
                Ok(())
            }
            Prompt::Box { y0, x0, y1, x1 } => {
                if y0 >= y1 || x0 >= x1 {
                    return Err(Error::Prompt(format!(
                        "box [{},{})x[{},{}) has no area",
                        y0, y1, x0, x1
                    )));
                }
                if *y1 > h || *x1 > w {
                    return Err(Error::Prompt(format!(
                        "box [{},{})x[{},{}) outside {}x{} image",
                        y0, y1, x0, x1, h, w
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Plain binary mask (ground truth or thresholded prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Dimension {
                op: "BinaryMask::new",
                detail: format!("{}x{} needs {} bits, got {}", h, w, h * w, data.len()),
            });
        }
        Ok(BinaryMask { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        BinaryMask { h, w, data: vec![false; h * w] }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.w + j] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn overlaps(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a && b)
    }
}

/// Segmentation output: logits with the induced binary mask (logits > 0).
#[derive(Debug, Clone)]
pub struct Mask {
    logits: Tensor,
}

impl Mask {
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        if logits.shape().len() != 2 {
            return Err(Error::Rank {
                op: "Mask::from_logits",
                detail: format!("want [H,W], got {:?}", logits.shape()),
            });
        }
        Ok(Mask { logits })
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn binary(&self) -> BinaryMask {
        let s = self.logits.shape();
        BinaryMask {
            h: s[0],
            w: s[1],
            data: self.logits.data().iter().map(|&v| v > 0.0).collect(),
        }
    }
}

/// Toy promptable segmentation model with seeded deterministic weights.
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Model {
    seed: u64,
    arch: ArchSpec,
    /// Conv kernels per layer, [C_out, C_in, 3, 3]; no bias terms.
    kernels: Vec<Tensor>,
    /// Stride per layer (two leading stride-2 stages).
    strides: Vec<usize>,
    /// Feature smoothing at the encoder output.
    blur_ksize: usize,
    blur_sigma: f64,
    /// Decoder temperature and cosine threshold.
    pub tau: f64,
    pub theta_cos: f64,
}

/// Build a model with weights drawn from a seeded generator, scaled by
/// 1/sqrt(fan-in). Equal (seed, arch) gives bit-identical models.
pub fn build_model(seed: u64, arch: ArchSpec) -> Result<Model> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernels = Vec::with_capacity(arch.depth);
    let mut strides = Vec::with_capacity(arch.depth);
    let mut c_in = 3usize;
    for layer in 0..arch.depth {
        let c_out = arch.channels;
        let fan_in = (c_in * 9) as f64;
        let scale = 1.0 / fan_in.sqrt();
        let data: Vec<f64> = (0..c_out * c_in * 9)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        kernels.push(Tensor::new(vec![c_out, c_in, 3, 3], data)?);
        strides.push(if layer < 2 { 2 } else { 1 });
        c_in = c_out;
    }
    Ok(Model {
        seed,
        arch,
        kernels,
        strides,
        blur_ksize: 3,
        blur_sigma: 0.8,
        tau: 10.0,
        theta_cos: 0.5,
    })
}

impl Model {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn arch(&self) -> ArchSpec {
        self.arch
    }

    /// Stable identifier used in reports.
    pub fn label(&self) -> String {
        format!("s{}d{}c{}", self.seed, self.arch.depth, self.arch.channels)
    }

    /// Image encoder on a tape: conv stack with relu between layers, two
    /// stride-2 reductions, Gaussian smoothing, then per-channel centering.
    /// Differentiable w.r.t. the image.
    pub fn encode<'t>(&self, tape: &'t Tape, image: Var<'t>) -> Result<Var<'t>> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Rank {
                op: "encode_image",
                detail: format!("want [3,H,W], got {:?}", s),
            });
        }
        if s[1] % FEATURE_STRIDE != 0 || s[2] % FEATURE_STRIDE != 0 {
            return Err(Error::Size {
                op: "encode_image",
                detail: format!("dims {}x{} not divisible by {}", s[1], s[2], FEATURE_STRIDE),
            });
        }
        let mut x = image;
        for (kern, &stride) in self.kernels.iter().zip(&self.strides) {
            let k = tape.constant(kern.clone());
            if stride > 1 {
                // anti-alias before sampling so stride artifacts cannot
                // dominate the feature response
                x = x.gauss_blur(self.blur_ksize, self.blur_sigma, true)?;
            }
            // replicate padding keeps border features consistent with the
            // interior (zero padding would darken the image rim)
            x = x.pad_replicate(1)?.conv2d(k, stride, 0)?.relu();
        }
        x = x.gauss_blur(self.blur_ksize, self.blur_sigma, true)?;
        x.center_channels()
    }

    /// Smallest |pre-activation| seen across every relu in a forward pass.
    /// Gradient checks need probe images whose margin comfortably exceeds
    /// the finite-difference step, away from the relu kink.
    pub fn relu_margin(&self, image: &Tensor) -> Result<f64> {
        let tape = Tape::new();
        let mut x = tape.constant(image.clone());
        let mut margin = f64::INFINITY;
        for (kern, &stride) in self.kernels.iter().zip(&self.strides) {
            let k = tape.constant(kern.clone());
            if stride > 1 {
                x = x.gauss_blur(self.blur_ksize, self.blur_sigma, true)?;
            }
            x = x.pad_replicate(1)?.conv2d(k, stride, 0)?;
            for &v in x.value().data() {
                margin = margin.min(v.abs());
            }
            x = x.relu();
        }
        Ok(margin)
    }

    /// Encoder output as a plain tensor (private tape).
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let iv = tape.constant(image.clone());
        Ok(self.encode(&tape, iv)?.value())
    }

    /// Prompt encoder: bilinear feature read at the down-scaled point
    /// location (background points negated, multiple points averaged), or
    /// the mean feature over a box interior.
    pub fn encode_prompt<'t>(
        &self,
        _tape: &'t Tape,
        features: Var<'t>,
        prompt: &Prompt,
        image_h: usize,
        image_w: usize,
    ) -> Result<Var<'t>> {
        prompt.validate(image_h, image_w)?;
        let fs = features.shape();
        let sf = FEATURE_STRIDE as f64;
        match prompt {
            Prompt::Points(ps) => {
                let mut acc: Option<Var<'t>> = None;
                for p in ps {
                    let mut e = features.bilinear_read(p.y / sf, p.x / sf)?;
                    if !p.foreground {
                        e = e.scale(-1.0);
                    }
                    acc = Some(match acc {
                        None => e,
                        Some(a) => a.add(e)?,
                    });
                }
                Ok(acc.expect("validated non-empty").scale(1.0 / ps.len() as f64))
            }
            Prompt::Box { y0, x0, y1, x1 } => {
                // only feature columns fully inside the box: partial border
                // columns dilute the embedding with background
                let mut fy0 = y0.div_ceil(FEATURE_STRIDE);
                let mut fx0 = x0.div_ceil(FEATURE_STRIDE);
                let mut fy1 = y1 / FEATURE_STRIDE;
                let mut fx1 = x1 / FEATURE_STRIDE;
                if fy1 <= fy0 {
                    fy0 = (y0 / FEATURE_STRIDE).min(fs[1] - 1);
                    fy1 = fy0 + 1;
                }
                if fx1 <= fx0 {
                    fx0 = (x0 / FEATURE_STRIDE).min(fs[2] - 1);
                    fx1 = fx0 + 1;
                }
                features.region_mean(fy0, fy1.min(fs[1]), fx0, fx1.min(fs[2]))
            }
        }
    }

    /// Mask decoder: per-column cosine against the embedding, shifted by
    /// theta_cos, scaled by tau, upsampled bilinearly to image size.
    pub fn decode<'t>(
        &self,
        tape: &'t Tape,
        features: Var<'t>,
        embedding: Var<'t>,
        image_h: usize,
        image_w: usize,
    ) -> Result<Var<'t>> {
        let fs = features.shape();
        let cos = features.cosine_map(embedding)?;
        let logits_f = cos.add_scalar(-self.theta_cos).scale(self.tau);
        let coarse = logits_f.reshape(&[1, fs[1], fs[2]])?;
        let sf = FEATURE_STRIDE as f64;
        let mut grid = Tensor::zeros(&[image_h, image_w, 2]);
        for i in 0..image_h {
            for j in 0..image_w {
                grid.set3(i, j, 0, i as f64 / sf);
                grid.set3(i, j, 1, j as f64 / sf);
            }
        }
        let up = coarse.grid_sample(tape.constant(grid))?;
        up.reshape(&[image_h, image_w])
    }

    /// Logits for (image, prompt) on a caller-supplied tape; the fully
    /// differentiable composition of encoder, prompt encoder and decoder.
    pub fn segment_logits<'t>(
        &self,
        tape: &'t Tape,
        image: Var<'t>,
        prompt: &Prompt,
    ) -> Result<Var<'t>> {
        let s = image.shape();
        let features = self.encode(tape, image)?;
        let embedding = self.encode_prompt(tape, features, prompt, s[1], s[2])?;
        self.decode(tape, features, embedding, s[1], s[2])
    }

    /// Full promptable segmentation: M = decode(encode(I), encode_prompt(P)).
    pub fn segment(&self, image: &Tensor, prompt: &Prompt) -> Result<Mask> {
        let tape = Tape::new();
        let iv = tape.constant(image.clone());
        let logits = self.segment_logits(&tape, iv, prompt)?;
        Mask::from_logits(logits.value())
    }

    /// Decode a prompt against precomputed features (plain tensors).
    /// Bit-identical to the corresponding stages of [`Model::segment`].
    pub fn segment_with_features(
        &self,
        features: &Tensor,
        prompt: &Prompt,
        image_h: usize,
        image_w: usize,
    ) -> Result<Mask> {
        let tape = Tape::new();
        let fv = tape.constant(features.clone());
        let embedding = self.encode_prompt(&tape, fv, prompt, image_h, image_w)?;
        let logits = self.decode(&tape, fv, embedding, image_h, image_w)?;
        Mask::from_logits(logits.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{finite_diff_check, test_rng::uniform_tensor};

    fn tiny_model(seed: u64) -> Model {
        build_model(seed, ArchSpec::default()).unwrap()
    }

    #[test]
    fn build_model_rejects_bad_arch() {
        assert!(build_model(0, ArchSpec { depth: 5, channels: 16 }).is_err());
        assert!(build_model(0, ArchSpec { depth: 3, channels: 7 }).is_err());
    }

    #[test]
    fn same_seed_same_outputs_bit_exactly() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 60);
        let a = tiny_model(5).features(&img).unwrap();
        let b = tiny_model(5).features(&img).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn different_seeds_differ() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 61);
        let a = tiny_model(5).features(&img).unwrap();
        let b = tiny_model(6).features(&img).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let img = Tensor::zeros(&[3, 16, 16]);
        let f = tiny_model(0).features(&img).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_shape_is_quarter_resolution() {
        let img = uniform_tensor(&[3, 64, 64], 0.0, 1.0, 62);
        let f = tiny_model(0).features(&img).unwrap();
        assert_eq!(f.shape(), &[16, 16, 16]);
    }

    #[test]
    fn encode_rejects_indivisible_dims() {
        let img = uniform_tensor(&[3, 10, 16], 0.0, 1.0, 63);
        assert!(matches!(tiny_model(0).features(&img).unwrap_err(), Error::Size { .. }));
    }

    /// First seed whose image keeps every pre-activation away from the
    /// relu kink; central differences are only valid off the kink.
    fn kink_free_image(model: &Model, shape: &[usize], margin: f64) -> Tensor {
        for seed in 0..1000u64 {
            let img = uniform_tensor(shape, 0.0, 1.0, 9000 + seed);
            if model.relu_margin(&img).unwrap() > margin {
                return img;
            }
        }
        panic!("no kink-free probe image found");
    }

    #[test]
    fn encode_gradient_passes_finite_differences() {
        let model = tiny_model(0);
        let img = kink_free_image(&model, &[3, 8, 8], 2e-3);
        // probe with a fixed random functional: the plain sum of centered
        // features is identically zero and would check nothing
        let probe = uniform_tensor(&[model.arch().channels, 2, 2], -1.0, 1.0, 777);
        let err = finite_diff_check(
            |t, v| {
                let f = model.encode(t, v)?;
                f.mul(t.constant(probe.clone())).map(|m| m.sum())
            },
            &img,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "got {}", err);
    }

    #[test]
    fn point_prompt_exact_grid_hit_reads_feature_column() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 65);
        let model = tiny_model(1);
        let tape = Tape::new();
        let iv = tape.constant(img.clone());
        let f = model.encode(&tape, iv).unwrap();
        let (fi, fj) = (2usize, 3usize);
        let e = model
            .encode_prompt(&tape, f, &Prompt::point((4 * fi) as f64, (4 * fj) as f64), 16, 16)
            .unwrap();
        let fv = f.value();
        let ev = e.value();
        for c in 0..fv.shape()[0] {
            assert_eq!(ev.data()[c].to_bits(), fv.at3(c, fi, fj).to_bits());
        }
    }

    #[test]
    fn whole_image_box_is_global_mean_feature() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 66);
        let model = tiny_model(1);
        let tape = Tape::new();
        let iv = tape.constant(img.clone());
        let f = model.encode(&tape, iv).unwrap();
        let e = model
            .encode_prompt(&tape, f, &Prompt::Box { y0: 0, x0: 0, y1: 16, x1: 16 }, 16, 16)
            .unwrap();
        let fv = f.value();
        let (c, h, w) = (fv.shape()[0], fv.shape()[1], fv.shape()[2]);
        for ch in 0..c {
            let mut mean = 0.0;
            for i in 0..h {
                for j in 0..w {
                    mean += fv.at3(ch, i, j);
                }
            }
            mean /= (h * w) as f64;
            assert!((e.value().data()[ch] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_points_average_their_embeddings() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 67);
        let model = tiny_model(1);
        let tape = Tape::new();
        let iv = tape.constant(img.clone());
        let f = model.encode(&tape, iv).unwrap();
        let p1 = Prompt::point(3.0, 5.0);
        let p2 = Prompt::point(9.5, 12.25);
        let e1 = model.encode_prompt(&tape, f, &p1, 16, 16).unwrap().value();
        let e2 = model.encode_prompt(&tape, f, &p2, 16, 16).unwrap().value();
        let both = Prompt::Points(vec![
            PromptPoint { y: 3.0, x: 5.0, foreground: true },
            PromptPoint { y: 9.5, x: 12.25, foreground: true },
        ]);
        let eb = model.encode_prompt(&tape, f, &both, 16, 16).unwrap().value();
        for c in 0..eb.len() {
            let expect = (e1.data()[c] + e2.data()[c]) / 2.0;
            assert!((eb.data()[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_prompt_errors() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 68);
        let model = tiny_model(1);
        assert!(matches!(
            model.segment(&img, &Prompt::point(20.0, 3.0)).unwrap_err(),
            Error::Prompt(_)
        ));
        assert!(matches!(
            model
                .segment(&img, &Prompt::Box { y0: 2, x0: 2, y1: 2, x1: 8 })
                .unwrap_err(),
            Error::Prompt(_)
        ));
    }

    #[test]
    fn threshold_above_max_gives_empty_mask() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 69);
        let mut model = tiny_model(1);
        model.theta_cos = 1.0;
        let mask = model.segment(&img, &Prompt::point(7.0, 7.0)).unwrap();
        assert_eq!(mask.binary().area(), 0);
    }

    #[test]
    fn self_embedding_maximizes_logits_at_its_location() {
        let img = uniform_tensor(&[3, 32, 32], 0.0, 1.0, 70);
        let model = tiny_model(2);
        let mask = model.segment(&img, &Prompt::point(12.0, 20.0)).unwrap();
        // the prompt location itself must sit in the positive region
        assert!(mask.binary().get(12, 20), "prompt pixel not in its own mask");
    }

    #[test]
    fn segment_composition_matches_manual_stages_bit_exactly() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 71);
        let model = tiny_model(3);
        let prompt = Prompt::point(6.0, 10.0);
        let composed = model.segment(&img, &prompt).unwrap();

        let tape = Tape::new();
        let iv = tape.constant(img.clone());
        let f = model.encode(&tape, iv).unwrap();
        let e = model.encode_prompt(&tape, f, &prompt, 16, 16).unwrap();
        let logits = model.decode(&tape, f, e, 16, 16).unwrap().value();

        assert!(composed
            .logits()
            .data()
            .iter()
            .zip(logits.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn segment_is_deterministic_across_calls() {
        let img = uniform_tensor(&[3, 16, 16], 0.0, 1.0, 72);
        let model = tiny_model(4);
        let prompt = Prompt::point(8.0, 8.0);
        let a = model.segment(&img, &prompt).unwrap();
        let b = model.segment(&img, &prompt).unwrap();
        assert!(a
            .logits()
            .data()
            .iter()
            .zip(b.logits().data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn segment_logits_differentiable_end_to_end() {
        let model = tiny_model(0);
        let img = kink_free_image(&model, &[3, 8, 8], 2e-3);
        let prompt = Prompt::point(4.0, 4.0);
        let err = finite_diff_check(
            |t, v| Ok(model.segment_logits(t, v, &prompt)?.sum()),
            &img,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "got {}", err);
    }

    #[test]
    fn flat_two_region_scene_segments_by_region() {
        // left half one color, right half another; no texture or noise
        let (h, w) = (32usize, 32usize);
        let mut img = Tensor::zeros(&[3, h, w]);
        let ca = [0.85, 0.2, 0.15];
        let cb = [0.1, 0.45, 0.9];
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    img.set3(c, i, j, if j < w / 2 { ca[c] } else { cb[c] });
                }
            }
        }
        let model = tiny_model(0);
        let region_a = {
            let mut m = BinaryMask::empty(h, w);
            for i in 0..h {
                for j in 0..w / 2 {
                    m.set(i, j, true);
                }
            }
            m
        };
        let pred_a = model.segment(&img, &Prompt::point(16.0, 8.0)).unwrap().binary();
        let pred_b = model.segment(&img, &Prompt::point(16.0, 24.0)).unwrap().binary();

        let iou = |a: &BinaryMask, b: &BinaryMask| {
            let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x && y).count();
            let uni = a.data().iter().zip(b.data()).filter(|(&x, &y)| x || y).count();
            if uni == 0 {
                1.0
            } else {
                inter as f64 / uni as f64
            }
        };
        let quality = iou(&pred_a, &region_a);
        assert!(quality >= 0.8, "region-A IoU {}", quality);

        // prompt locality: masks from the two regions barely overlap
        let cross = iou(&pred_a, &pred_b);
        assert!(cross < 0.2, "cross-region IoU {}", cross);
    }
}
