//! File formats, dataset loading and synthetic data.

pub mod convert;
pub mod format;
pub mod synth;

use std::path::Path;

use crate::bag::{FeatureBag, PromptSet};
use crate::error::{FocusError, Result};
use crate::manifest::DatasetManifest;

pub use format::{read_bag, read_prompts, write_bag, write_prompts};
pub use synth::{generate_synthetic, signal_recall, SynthSpec, SyntheticDataset};

/// A manifest with its bags loaded, labels taken from the manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Aligned with `manifest.bags`.
    pub bags: Vec<FeatureBag>,
    pub prompts: Option<PromptSet>,
}

impl Dataset {
    /// Checks bag dimensions and labels against the manifest.
    pub fn new(manifest: DatasetManifest, bags: Vec<FeatureBag>, prompts: Option<PromptSet>) -> Result<Self> {
        manifest.validate()?;
        if bags.len() != manifest.bags.len() {
            return Err(FocusError::config(format!(
                "{} bags for {} manifest entries",
                bags.len(),
                manifest.bags.len()
            )));
        }
        for (b, e) in bags.iter().zip(&manifest.bags) {
            if b.dim() != manifest.d {
                return Err(FocusError::InvalidBag {
                    id: b.id.clone(),
                    reason: format!("dimension {} differs from manifest d = {}", b.dim(), manifest.d),
                });
            }
            if b.label != Some(e.label) {
                return Err(FocusError::InvalidBag {
                    id: b.id.clone(),
                    reason: format!("label {:?} differs from manifest label {}", b.label, e.label),
                });
            }
        }
        if let Some(p) = &prompts {
            if p.dim() != manifest.d {
                return Err(FocusError::config(format!(
                    "prompt dimension {} differs from manifest d = {}",
                    p.dim(),
                    manifest.d
                )));
            }
        }
        Ok(Self {
            manifest,
            bags,
            prompts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }
}

impl From<SyntheticDataset> for Dataset {
    fn from(s: SyntheticDataset) -> Self {
        Dataset {
            manifest: s.manifest,
            bags: s.bags,
            prompts: Some(s.prompts),
        }
    }
}

/// Loads the manifest at `path`, every bag it lists and its prompt file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = DatasetManifest::load(path)?;
    let bags = manifest
        .bags
        .iter()
        .map(|e| {
            let mut b = read_bag(manifest.resolve(&e.path))?;
            b.label = Some(e.label);
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    let prompts = match &manifest.prompts {
        Some(p) => Some(read_prompts(manifest.resolve(p), manifest.classes.clone())?),
        None => None,
    };
    Dataset::new(manifest, bags, prompts)
}
