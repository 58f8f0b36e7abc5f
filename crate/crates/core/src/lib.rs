//! Few-shot weakly supervised slide classification with language-guided
//! visual token compression.

pub mod aggregator;
pub mod bag;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod pooling;
pub mod prioritize;
pub mod redundancy;
pub mod rng;
pub mod seqcompress;
pub mod trainer;

pub use bag::{CompressionTrace, FeatureBag, PromptSet, StageRecord};
pub use config::{Ablation, RunConfig, ScoreProjection};
pub use error::{FocusError, Result};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use numerics::{ParamStore, Tensor2};
pub use model::{FocusModel, HeadKind};
pub use pipeline::forward_pipeline;
pub use checkpoint::Checkpoint;
pub use dataio::{Dataset, SynthSpec};
pub use metrics::{EvalBatch, Metrics};
pub use trainer::{run_ablation, run_experiment, run_experiment_with_model, AblationTable, ExperimentReport, FoldResult, MeanStd};
