//! Synthetic bags with planted class signal and redundant background.
//!
//! Class centroids `μ_c` are orthonormal. Each bag is made of background
//! runs: a run repeats one vector (a shared background centroid plus noise)
//! with tiny jitter, so neighbouring tokens are near duplicates. Then
//! `⌈ρ·N⌉` random positions are overwritten with signal tokens near the
//! bag's class centroid. Knowledge prompts are one noisy `μ_c` per class.

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bag::{FeatureBag, PromptSet};
use crate::error::{FocusError, Result};
use crate::manifest::{resplit, DatasetManifest, ManifestEntry, Split};
use crate::numerics::ops::dot;
use crate::numerics::Tensor2;
use crate::rng::{derive_seed, rng_from_seed, stream, FocusRng};

/// Per-entry standard deviation of the within-run jitter.
pub const RUN_JITTER: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub bags_per_class: usize,
    /// Tokens per bag.
    pub tokens: usize,
    pub dim: usize,
    pub signal_fraction: f64,
    pub run_len: usize,
    pub noise_sigma: f64,
    pub background_centroids: usize,
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            bags_per_class: 40,
            tokens: 2048,
            dim: 64,
            signal_fraction: 0.05,
            run_len: 16,
            noise_sigma: 0.1,
            background_centroids: 8,
            split: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn signal_count(&self) -> usize {
        (self.signal_fraction * self.tokens as f64 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(FocusError::Config(m));
        if self.classes < 2 {
            return fail("synthetic data needs at least two classes".into());
        }
        if self.dim < self.classes {
            return fail(format!(
                "dim {} is smaller than the class count {}",
                self.dim, self.classes
            ));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction < 1.0) {
            return fail(format!("signal_fraction must lie in (0, 1), got {}", self.signal_fraction));
        }
        if self.signal_count() < 1 || self.signal_count() > self.tokens {
            return fail("signal_fraction * tokens must be at least 1".into());
        }
        if self.run_len < 1 || self.bags_per_class < 1 || self.background_centroids < 1 {
            return fail("run_len, bags_per_class and background_centroids must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SynthSpec,
    pub manifest: DatasetManifest,
    /// Aligned with `manifest.bags`, labels set.
    pub bags: Vec<FeatureBag>,
    pub prompts: PromptSet,
    /// Planted signal patch indices per bag.
    pub signal_positions: Vec<Vec<u64>>,
    pub class_centroids: Tensor2,
}

fn gaussian(d: usize, rng: &mut FocusRng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// `count` orthonormal vectors by Gram-Schmidt over Gaussian draws.
pub fn orthonormal_rows(count: usize, d: usize, rng: &mut FocusRng) -> Tensor2 {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut v = gaussian(d, rng);
        for r in &rows {
            let p = dot(&v, r);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
        }
        if dot(&v, &v).sqrt() > 1e-6 {
            rows.push(unit(v));
        }
    }
    Tensor2::from_rows(&rows)
}

/// `base + σ·g/√d`, so the noise has norm about `σ`.
fn noisy(base: &[f64], sigma: f64, rng: &mut FocusRng) -> Vec<f64> {
    let s = sigma / (base.len() as f64).sqrt();
    base.iter()
        .map(|&b| {
            let g: f64 = StandardNormal.sample(rng);
            b + s * g
        })
        .collect()
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// One bag of class `label`. Returns the bag and its signal positions.
pub fn generate_bag(
    spec: &SynthSpec,
    id: &str,
    label: usize,
    class_centroids: &Tensor2,
    background: &Tensor2,
    rng: &mut FocusRng,
) -> (FeatureBag, Vec<u64>) {
    let (n, d) = (spec.tokens, spec.dim);
    let mut data = Vec::with_capacity(n * d);
    while data.len() < n * d {
        let k = (rng_index(rng, background.rows())) as usize;
        let run = noisy(background.row(k), spec.noise_sigma, rng);
        let len = spec.run_len.min(n - data.len() / d);
        for _ in 0..len {
            data.extend(run.iter().map(|&x| {
                let g: f64 = StandardNormal.sample(rng);
                x + RUN_JITTER * g
            }));
        }
    }
    let mut positions: Vec<usize> = sample(rng, n, spec.signal_count()).into_vec();
    positions.sort_unstable();
    for &p in &positions {
        let tok = noisy(class_centroids.row(label), spec.noise_sigma, rng);
        data[p * d..(p + 1) * d].copy_from_slice(&tok);
    }
    round_f32(&mut data);
    let features = Tensor2::from_vec(n, d, data).expect("sizes match");
    let bag = FeatureBag::from_features(id, features, Some(label)).expect("synthetic bag is valid");
    (bag, positions.into_iter().map(|p| p as u64).collect())
}

fn rng_index(rng: &mut FocusRng, n: usize) -> u64 {
    use rand::Rng;
    rng.random_range(0..n as u64)
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let centroids = orthonormal_rows(spec.classes, spec.dim, &mut rng);
    let background = Tensor2::from_rows(
        &(0..spec.background_centroids)
            .map(|_| unit(gaussian(spec.dim, &mut rng)))
            .collect::<Vec<_>>(),
    );
    let mut knowledge = Tensor2::zeros(spec.classes, spec.dim);
    for c in 0..spec.classes {
        let mut row = noisy(centroids.row(c), spec.noise_sigma, &mut rng);
        round_f32(&mut row);
        knowledge.row_mut(c).copy_from_slice(&row);
    }
    let class_names: Vec<String> = (0..spec.classes).map(|c| format!("class{c}")).collect();
    let prompts = PromptSet::knowledge_only(knowledge, class_names.clone())?;

    let mut bags = Vec::new();
    let mut entries = Vec::new();
    let mut signal_positions = Vec::new();
    for c in 0..spec.classes {
        for i in 0..spec.bags_per_class {
            let id = format!("c{c}_b{i:03}");
            let (bag, sig) = generate_bag(spec, &id, c, &centroids, &background, &mut rng);
            entries.push(ManifestEntry {
                path: format!("bags/{id}.fbag"),
                label: c,
                split: Split::Train,
            });
            bags.push(bag);
            signal_positions.push(sig);
        }
    }
    let manifest = DatasetManifest {
        d: spec.dim,
        classes: class_names,
        bags: entries,
        prompts: Some("prompts.fbag".into()),
        base_dir: Default::default(),
    };
    let manifest = resplit(&manifest, spec.split, derive_seed(spec.seed, stream::SPLIT))?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        manifest,
        bags,
        prompts,
        signal_positions,
        class_centroids: centroids,
    })
}

impl SyntheticDataset {
    /// Writes bags, prompts, the manifest and the planted signal positions
    /// under `dir`. Returns the manifest path.
    pub fn write(&self, dir: impl AsRef<std::path::Path>) -> Result<std::path::PathBuf> {
        let dir = dir.as_ref();
        let bag_dir = dir.join("bags");
        std::fs::create_dir_all(&bag_dir).map_err(|e| FocusError::io(&bag_dir, e))?;
        for (entry, bag) in self.manifest.bags.iter().zip(&self.bags) {
            super::format::write_bag(bag, dir.join(&entry.path))?;
        }
        super::format::write_prompts(&self.prompts, dir.join("prompts.fbag"))?;
        let sig: std::collections::BTreeMap<String, &Vec<u64>> = self
            .bags
            .iter()
            .zip(&self.signal_positions)
            .map(|(b, s)| (b.id.clone(), s))
            .collect();
        let sig_path = dir.join("signal.json");
        std::fs::write(&sig_path, serde_json::to_string(&sig)? + "\n")
            .map_err(|e| FocusError::io(&sig_path, e))?;
        let m = dir.join("manifest.json");
        self.manifest.save(&m)?;
        Ok(m)
    }
}

/// Fraction of `planted` indices found in `retained` (both ascending).
pub fn signal_recall(planted: &[u64], retained: &[u64]) -> f64 {
    if planted.is_empty() {
        return 1.0;
    }
    let hits = planted
        .iter()
        .filter(|p| retained.binary_search(p).is_ok())
        .count();
    hits as f64 / planted.len() as f64
}
