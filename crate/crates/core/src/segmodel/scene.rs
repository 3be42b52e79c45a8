//! Deterministic synthetic scenes: flat-colored rectangles and discs on a
//! smoothly textured background, with ground-truth masks for prompting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BinaryMask;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// One evaluation scene: image in [0,1] plus disjoint ground-truth masks.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Tensor,
    pub gt_masks: Vec<BinaryMask>,
    pub seed: u64,
}

const NOISE_AMPLITUDE: f64 = 0.02;
const PLACEMENT_TRIES: usize = 100;

fn color_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt()
}

/// Generate a scene with `n_objects` disjoint flat-colored shapes.
/// Deterministic per seed; errors if placement fails 100 times for any
/// object.
pub fn generate_scene(seed: u64, h: usize, w: usize, n_objects: usize) -> Result<Scene> {
    if n_objects < 1 {
        return Err(Error::Config("n_objects must be >= 1".into()));
    }
    if h < 16 || w < 16 {
        return Err(Error::Config(format!("scene {}x{} too small (min 16x16)", h, w)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Smooth low-frequency background around a base color.
    let base = [
        rng.random_range(0.44..0.56),
        rng.random_range(0.44..0.56),
        rng.random_range(0.44..0.56),
    ];
    let mut image = Tensor::zeros(&[3, h, w]);
    for c in 0..3 {
        let (fy, fx) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let (py, px) = (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU));
        let amp = rng.random_range(0.008..0.02);
        for i in 0..h {
            for j in 0..w {
                let t = amp
                    * ((i as f64 / h as f64 * std::f64::consts::TAU * fy + py).sin()
                        + (j as f64 / w as f64 * std::f64::consts::TAU * fx + px).sin());
                image.set3(c, i, j, base[c] + t);
            }
        }
    }

    // Objects: discs and axis-aligned rectangles with well-separated colors.
    let mut colors: Vec<[f64; 3]> = vec![base];
    let mut gt_masks: Vec<BinaryMask> = Vec::with_capacity(n_objects);
    // generous sizes for sparse scenes, shrinking as the scene fills up
    let max_r = if n_objects <= 2 {
        (h.min(w) / 4).max(8)
    } else {
        (h.min(w) / (2 * (n_objects + 1))).max(6)
    };
    // Seeded-shuffled corner palette: pairwise distance 0.4, and at least
    // seven corners sit >= 0.3 away from any background base.
    let mut palette: Vec<[f64; 3]> = Vec::with_capacity(8);
    for r in [0.38, 0.62] {
        for g in [0.38, 0.62] {
            for b in [0.38, 0.62] {
                palette.push([r, g, b]);
            }
        }
    }
    for i in (1..palette.len()).rev() {
        palette.swap(i, rng.random_range(0..=i));
    }
    palette.retain(|&c| color_dist(c, base) >= 0.17);

    for obj in 0..n_objects {
        // a jittered palette color, far from the background and every
        // earlier object; the search does not consume placement tries
        let mut color = [0.0; 3];
        let mut found_color = false;
        for _ in 0..1000 {
            let pick = palette[rng.random_range(0..palette.len())];
            color = [
                (pick[0] + rng.random_range(-0.03..0.03)).clamp(0.05, 0.95),
                (pick[1] + rng.random_range(-0.03..0.03)).clamp(0.05, 0.95),
                (pick[2] + rng.random_range(-0.03..0.03)).clamp(0.05, 0.95),
            ];
            if colors.iter().all(|&c| color_dist(c, color) >= 0.17) {
                found_color = true;
                break;
            }
        }
        if !found_color {
            return Err(Error::Placement(format!("no distinct color for object {}", obj)));
        }
        let mut placed = false;
        for attempt in 0..PLACEMENT_TRIES {
            // prefer large objects; fall back to small ones if the scene
            // is too crowded for the preferred size
            let lo = if attempt < PLACEMENT_TRIES / 4 {
                (max_r * 5 / 8).max(5)
            } else {
                5
            };
            let is_disc = rng.random_bool(0.5);
            let mask = if is_disc {
                let r = rng.random_range(lo..=max_r.max(7)) as i64;
                let cy = rng.random_range(r as usize..h - r as usize) as i64;
                let cx = rng.random_range(r as usize..w - r as usize) as i64;
                let mut m = BinaryMask::empty(h, w);
                for i in 0..h as i64 {
                    for j in 0..w as i64 {
                        if (i - cy).pow(2) + (j - cx).pow(2) <= r * r {
                            m.set(i as usize, j as usize, true);
                        }
                    }
                }
                m
            } else {
                let hh = rng.random_range(lo.min(max_r)..=max_r.max(6));
                let hw = rng.random_range(lo.min(max_r)..=max_r.max(6));
                let cy = rng.random_range(hh..h - hh);
                let cx = rng.random_range(hw..w - hw);
                let mut m = BinaryMask::empty(h, w);
                for i in cy - hh..cy + hh {
                    for j in cx - hw..cx + hw {
                        m.set(i, j, true);
                    }
                }
                m
            };
            if gt_masks.iter().any(|g| g.overlaps(&mask)) {
                continue;
            }
            // multiplicative shading: invisible to a cosine decoder (it
            // preserves color direction) but gives deformation something
            // to move inside the region
            let (mut cy, mut cx, mut area) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..h {
                for j in 0..w {
                    if mask.get(i, j) {
                        cy += i as f64;
                        cx += j as f64;
                        area += 1.0;
                    }
                }
            }
            cy /= area;
            cx /= area;
            let extent = area.sqrt().max(4.0);
            let ga = rng.random_range(-0.25..0.25);
            let gb = rng.random_range(-0.25..0.25);
            for i in 0..h {
                for j in 0..w {
                    if mask.get(i, j) {
                        let shade =
                            1.0 + ga * (i as f64 - cy) / extent + gb * (j as f64 - cx) / extent;
                        for c in 0..3 {
                            // scale the contrast vector, not the raw color:
                            // keeps the feature direction (what the decoder
                            // thresholds) stable while varying magnitude
                            image.set3(c, i, j, base[c] + (color[c] - base[c]) * shade);
                        }
                    }
                }
            }
            colors.push(color);
            gt_masks.push(mask);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Placement(format!(
                "object {} of {} found no disjoint spot in {} tries",
                obj, n_objects, PLACEMENT_TRIES
            )));
        }
    }

    // Mild per-pixel noise over the whole image, then clamp to [0,1].
    for v in image.data_mut() {
        *v = (*v + rng.random_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE)).clamp(0.0, 1.0);
    }

    Ok(Scene { image, gt_masks, seed })
}
