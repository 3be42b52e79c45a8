//! Scene corpus on disk: one PPM per image, one PGM per ground-truth mask,
//! plus a manifest listing seeds and mask filenames.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgio::{read_pgm, read_ppm, write_pgm, write_ppm};
use crate::kvtext::{self, Section};
use crate::segmodel::Scene;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Write scenes and the manifest into `dir` (created if missing).
pub fn save_corpus(dir: &Path, scenes: &[Scene]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut sections = Vec::with_capacity(scenes.len() + 1);
    let mut head = Section::new("corpus");
    head.set("count", scenes.len());
    if let Some(first) = scenes.first() {
        head.set("height", first.image.shape()[1]);
        head.set("width", first.image.shape()[2]);
    }
    sections.push(head);

    for (i, scene) in scenes.iter().enumerate() {
        let image_name = format!("scene_{:04}.ppm", i);
        write_ppm(&dir.join(&image_name), &scene.image)?;
        let mut mask_names = Vec::new();
        for (mi, mask) in scene.gt_masks.iter().enumerate() {
            let mask_name = format!("scene_{:04}_mask_{}.pgm", i, mi);
            write_pgm(&dir.join(&mask_name), mask)?;
            mask_names.push(mask_name);
        }
        let mut s = Section::new(&format!("scene {}", i));
        s.set("seed", scene.seed);
        s.set("image", image_name);
        s.set("masks", mask_names.join(","));
        sections.push(s);
    }
    fs::write(dir.join(MANIFEST_NAME), kvtext::render(&sections))?;
    Ok(())
}

/// Load a corpus back from disk. Images carry the 8-bit quantization of
/// the stored files, so metrics computed on them reflect the deliverable
/// artifacts.
pub fn load_corpus(dir: &Path) -> Result<Vec<Scene>> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Config(format!("cannot read manifest {}: {}", manifest_path.display(), e))
    })?;
    let sections = kvtext::parse(&text)?;
    let head = sections
        .iter()
        .find(|s| s.name == "corpus")
        .ok_or_else(|| Error::Config("manifest has no [corpus] section".into()))?;
    let count: usize = head.parse_as("count")?;

    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let name = format!("scene {}", i);
        let s = sections
            .iter()
            .find(|sec| sec.name == name)
            .ok_or_else(|| Error::Config(format!("manifest missing [{}]", name)))?;
        let seed: u64 = s.parse_as("seed")?;
        let image = read_ppm(&dir.join(s.require("image")?))?;
        let mut gt_masks = Vec::new();
        for mask_name in s.require("masks")?.split(',').filter(|m| !m.is_empty()) {
            gt_masks.push(read_pgm(&dir.join(mask_name))?);
        }
        scenes.push(Scene { image, gt_masks, seed });
    }
    Ok(scenes)
}
