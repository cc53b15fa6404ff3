//! The experiment config: one strict JSON document that pins a whole run.
//!
//! Any section may be omitted (reference defaults apply), but unknown keys
//! anywhere are rejected so typos fail fast instead of silently falling
//! back to defaults.
//!
//! Seeds follow one rule: a section seed left at 0 is derived from the
//! global `seed`, each section on its own stream, so one number pins the
//! entire run while sections stay decorrelated. Set a section seed to any
//! nonzero value to control it independently. The one consequence: a
//! literal section seed of 0 cannot be forced.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use voiceface_core::embedder::Activation;
use voiceface_core::evaluation::{MatchingOptions, RetrievalOptions, SplitMode};
use voiceface_core::metric::MetricSpaceConfig;
use voiceface_core::sampling::SamplerConfig;
use voiceface_core::seeds;
use voiceface_core::segment::DetectorConfig;
use voiceface_core::synthetic::GeneratorConfig;
use voiceface_core::training::{LrSchedule, Optimizer, Reduction, TrainingConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Global seed; every section seed left at 0 derives from this.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub space: MetricSpaceConfig,
    pub embedders: EmbeddersSection,
    pub sampler: SamplerConfig,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub split: SplitSection,
    pub segmenter: DetectorConfig,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddersSection {
    pub voice: EmbedderSection,
    pub face: EmbedderSection,
}

/// Architecture of one modality's network. `frozen` defaults per side —
/// true for voice, false for face — matching the reference recipe of
/// anchoring the voice tower and training the face tower against it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub frozen: Option<bool>,
    pub seed: u64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self {
            hidden_dims: vec![256],
            activation: Activation::Rectifier,
            frozen: None,
            seed: 0,
        }
    }
}

/// Mirror of the engine's training options minus the sampler, which is its
/// own top-level section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub margin: f64,
    pub optimizer: Optimizer,
    /// Omit to use the reference step-wise shape scaled to `total_steps`.
    pub schedule: Option<LrSchedule>,
    pub total_steps: u64,
    pub reduction: Reduction,
    pub voice_lr_multipliers: Vec<f64>,
    pub face_lr_multipliers: Vec<f64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let reference = TrainingConfig::default();
        Self {
            margin: reference.margin,
            optimizer: reference.optimizer,
            schedule: None,
            total_steps: reference.total_steps,
            reduction: reference.reduction,
            voice_lr_multipliers: Vec::new(),
            face_lr_multipliers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub matching: MatchingOptions,
    pub retrieval: RetrievalOptions,
    pub individual_repeats: usize,
    pub individual_seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            matching: MatchingOptions::default(),
            retrieval: RetrievalOptions::default(),
            individual_repeats: 10,
            individual_seed: 0,
        }
    }
}

/// Train/test split shared by `train --split train` and
/// `evaluate --split test`: the same config and global seed on both
/// commands yields complementary halves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub mode: SplitMode,
    /// Share of the data that goes to the training side.
    pub fraction: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            mode: SplitMode::UnseenUnheard,
            fraction: 0.7,
            seed: 0,
        }
    }
}

/// Default file locations; command-line paths override these.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub stream: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub segments: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Assembles the engine training config, resolving the sampler's seed
    /// against the global one.
    pub fn training_config(&self, global_seed: u64) -> TrainingConfig {
        let mut sampler = self.sampler;
        sampler.seed = derive_seed(sampler.seed, global_seed, seeds::stream::SAMPLER);
        TrainingConfig {
            margin: self.training.margin,
            optimizer: self.training.optimizer,
            schedule: self
                .training
                .schedule
                .clone()
                .unwrap_or_else(|| LrSchedule::step_wise(self.training.total_steps)),
            total_steps: self.training.total_steps,
            reduction: self.training.reduction,
            sampler,
            voice_lr_multipliers: self.training.voice_lr_multipliers.clone(),
            face_lr_multipliers: self.training.face_lr_multipliers.clone(),
        }
    }
}

/// Resolves a section seed that the engine namespaces internally: 0 means
/// "use the global seed".
pub fn resolve_seed(section_seed: u64, global: u64) -> u64 {
    if section_seed == 0 {
        global
    } else {
        section_seed
    }
}

/// Resolves a section seed that the engine consumes raw: 0 means "derive
/// from the global seed on this section's stream".
pub fn derive_seed(section_seed: u64, global: u64, stream: u64) -> u64 {
    if section_seed == 0 {
        seeds::derive(global, stream)
    } else {
        section_seed
    }
}
