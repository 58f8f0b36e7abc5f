//! Converts a directory of raw per-slide matrices into feature files and a
//! manifest.
//!
//! The input directory holds one `<slide>.f32` file per slide (row-major
//! little-endian f32, `N × d`) and a `labels.json` sidecar:
//!
//! ```json
//! {"d": 512, "classes": ["normal", "tumor"],
//!  "slides": {"slide_001": 0, "slide_002": 1},
//!  "prompts": "prompts.f32"}
//! ```
//!
//! `prompts` is optional and names a raw `t1 × d` matrix of knowledge prompt
//! embeddings. Patch indices are the row numbers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::format::{encode, write_bag};
use crate::bag::FeatureBag;
use crate::error::{FocusError, Result};
use crate::manifest::{resplit, DatasetManifest, ManifestEntry, Split};
use crate::numerics::Tensor2;

pub const SIDECAR: &str = "labels.json";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    d: usize,
    classes: Vec<String>,
    slides: BTreeMap<String, usize>,
    #[serde(default)]
    prompts: Option<String>,
}

fn read_raw(path: &Path, d: usize) -> Result<Tensor2> {
    let bytes = std::fs::read(path).map_err(|e| FocusError::io(path, e))?;
    if bytes.is_empty() || bytes.len() % (4 * d) != 0 {
        return Err(FocusError::Malformed {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of {d}-wide f32 rows", bytes.len()),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor2::from_vec(bytes.len() / (4 * d), d, data)
}

/// Converts `input` into `output`; returns the written manifest's path.
pub fn convert_directory(input: &Path, output: &Path, split: [f64; 3], seed: u64) -> Result<PathBuf> {
    let sidecar_path = input.join(SIDECAR);
    let text = std::fs::read_to_string(&sidecar_path).map_err(|e| FocusError::io(&sidecar_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let bag_dir = output.join("bags");
    std::fs::create_dir_all(&bag_dir).map_err(|e| FocusError::io(&bag_dir, e))?;

    let mut entries = Vec::with_capacity(sidecar.slides.len());
    for (slide, &label) in &sidecar.slides {
        let features = read_raw(&input.join(format!("{slide}.f32")), sidecar.d)?;
        let bag = FeatureBag::from_features(slide.as_str(), features, Some(label))?;
        let rel = format!("bags/{slide}.fbag");
        write_bag(&bag, output.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            label,
            split: Split::Train,
        });
    }
    let prompts = match &sidecar.prompts {
        Some(p) => {
            let k = read_raw(&input.join(p), sidecar.d)?;
            let idx: Vec<u64> = (0..k.rows() as u64).collect();
            let out = output.join("prompts.fbag");
            std::fs::write(&out, encode(&k, &idx)).map_err(|e| FocusError::io(&out, e))?;
            Some("prompts.fbag".to_string())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        d: sidecar.d,
        classes: sidecar.classes,
        bags: entries,
        prompts,
        base_dir: output.to_path_buf(),
    };
    manifest.validate()?;
    let manifest = resplit(&manifest, split, seed)?;
    let path = output.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
