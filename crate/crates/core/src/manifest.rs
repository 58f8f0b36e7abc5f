//! Dataset manifest, stratified resampling into folds and K-shot sampling.
//!
//! On disk a manifest is JSON:
//!
//! ```json
//! {"d": 512, "classes": ["a", "b"],
//!  "bags": [{"path": "bags/s1.fbag", "label": 0, "split": "train"}]}
//! ```
//!
//! Paths are relative to the manifest's directory. An optional `"prompts"`
//! field names the knowledge-prompt file the same way.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{FocusError, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
}

impl ManifestEntry {
    /// Bag id: the file stem, as assigned by the bag reader.
    pub fn id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub d: usize,
    pub classes: Vec<String>,
    pub bags: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(FocusError::config("manifest d must be positive"));
        }
        if self.classes.len() < 2 {
            return Err(FocusError::config("manifest needs at least two classes"));
        }
        for e in &self.bags {
            if e.label >= self.classes.len() {
                return Err(FocusError::LabelOutOfRange {
                    label: e.label,
                    classes: self.classes.len(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FocusError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| FocusError::io(path, e))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        self.bags
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Entry indices per class, in manifest order.
    fn by_class(&self, split: Option<Split>) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes.len()];
        for (i, e) in self.bags.iter().enumerate() {
            if split.is_none_or(|s| e.split == s) {
                out[e.label].push(i);
            }
        }
        out
    }
}

/// Per-class split sizes: val and test take the floor of their share, train
/// takes the rest.
pub fn split_counts(n: usize, ratio: [f64; 3]) -> [usize; 3] {
    let val = (ratio[1] * n as f64 + 1e-9).floor() as usize;
    let test = (ratio[2] * n as f64 + 1e-9).floor() as usize;
    [n - val - test, val, test]
}

/// Stratified random re-assignment of every bag to train/val/test.
pub fn resplit(manifest: &DatasetManifest, ratio: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    for (class, members) in manifest.by_class(None).into_iter().enumerate() {
        if members.is_empty() {
            return Err(FocusError::EmptyClass { class });
        }
        let mut shuffled = members;
        let mut rng = rng_from_seed(derive_seed(seed, class as u64));
        shuffled.shuffle(&mut rng);
        let [_, n_val, n_test] = split_counts(shuffled.len(), ratio);
        for (rank, &i) in shuffled.iter().enumerate() {
            out.bags[i].split = if rank < n_val {
                Split::Val
            } else if rank < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}

/// Seed of fold `fold` under `master`.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    derive_seed(derive_seed(master, stream::FOLD), fold as u64)
}

/// `n_folds` independent stratified resamplings.
pub fn make_folds(
    manifest: &DatasetManifest,
    n_folds: usize,
    ratio: [f64; 3],
    seed: u64,
) -> Result<Vec<DatasetManifest>> {
    if n_folds < 2 {
        return Err(FocusError::config(format!("n_folds must be at least 2, got {n_folds}")));
    }
    (0..n_folds)
        .map(|f| resplit(manifest, ratio, fold_seed(seed, f)))
        .collect()
}

/// Draws `k` training bags per class without replacement.
///
/// Returns manifest entry indices grouped by class, ascending within a class.
pub fn sample_k_shot(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(k * manifest.num_classes());
    for (class, members) in manifest.by_class(Some(Split::Train)).into_iter().enumerate() {
        if members.len() < k {
            return Err(FocusError::InsufficientShots {
                class,
                available: members.len(),
                required: k,
            });
        }
        let mut rng = rng_from_seed(derive_seed(derive_seed(seed, stream::SHOTS), class as u64));
        let mut picked: Vec<usize> = members.choose_multiple(&mut rng, k).copied().collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}
