//! Pipeline configuration: nested TOML sections, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::DEFAULT_ENCODER;
use crate::behavior::BehaviorCodeTable;
use crate::classifier::ClassifierConfig;
use crate::cluster::{GmmConfig, KMeansConfig};
use crate::error::{Error, Result};
use crate::flow::segment_count;
use crate::metrics::AccuracyMode;
use crate::nn::TrainConfig;
use crate::persist::sha256_hex;
use crate::synthgen::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    /// Segment length τ in seconds.
    pub tau: f64,
    /// Capture span the segment grid covers; `L = ceil(window / τ)`.
    pub observation_window: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            tau: 300.0,
            observation_window: 3600.0,
        }
    }
}

impl SegmentationConfig {
    pub fn segments(&self) -> Result<usize> {
        segment_count(self.observation_window, self.tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub enabled: bool,
    /// Flows shorter than this (capped at the observation window) are dropped.
    pub min_duration: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            min_duration: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeScope {
    /// Fit on the training split only.
    #[default]
    Train,
    /// Fit on every labeled flow of the training capture.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Drop the segment encoding and classify on flow statistics alone.
    pub flow_features_only: bool,
    pub standardize_scope: StandardizeScope,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            flow_features_only: false,
            standardize_scope: StandardizeScope::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Encoder widths from input to bottleneck; the decoder mirrors them.
    pub encoder: Vec<usize>,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            encoder: DEFAULT_ENCODER.to_vec(),
            seed: 7,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    #[default]
    Kmeans,
    Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub kind: ClusterKind,
    pub kmeans: KMeansConfig,
    pub gmm: GmmConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            kind: ClusterKind::Kmeans,
            kmeans: KMeansConfig::default(),
            gmm: GmmConfig::default(),
        }
    }
}

impl ClusterConfig {
    pub fn k(&self) -> usize {
        match self.kind {
            ClusterKind::Kmeans => self.kmeans.k,
            ClusterKind::Gmm => self.gmm.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub seed: u64,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub accuracy_mode: AccuracyMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub segmentation: SegmentationConfig,
    pub filter: FilterConfig,
    pub behavior: BehaviorCodeTable,
    pub features: FeatureConfig,
    pub autoencoder: AutoencoderConfig,
    pub cluster: ClusterConfig,
    pub classifier: ClassifierConfig,
    pub split: SplitConfig,
    pub evaluation: EvaluationConfig,
    pub generator: GeneratorConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets every random seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.autoencoder.seed = seed;
        self.autoencoder.train.seed = seed;
        self.cluster.kmeans.seed = seed;
        self.cluster.gmm.seed = seed;
        self.classifier.gbt.seed = seed;
        self.classifier.rf.seed = seed;
        self.classifier.nn.train.seed = seed;
        self.split.seed = seed;
        self.generator.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation.segments().map_err(|e| Error::Config(e.to_string()))?;
        let s = &self.split;
        if [s.train, s.validation, s.test].iter().any(|r| !(0.0..=1.0).contains(r))
            || (s.train + s.validation + s.test - 1.0).abs() > 1e-9
            || s.train <= 0.0
        {
            return Err(Error::Config(format!("split ratios {s:?} must be non-negative and sum to 1")));
        }
        if self.autoencoder.encoder.first() != Some(&crate::features::BEHAVIOR_DIM) {
            return Err(Error::Config(format!(
                "autoencoder input width must be {}",
                crate::features::BEHAVIOR_DIM
            )));
        }
        if self.autoencoder.encoder.len() < 2 || self.autoencoder.encoder.contains(&0) {
            return Err(Error::Config("autoencoder needs at least one non-empty layer".into()));
        }
        if self.cluster.k() == 0 {
            return Err(Error::Config("cluster count must be positive".into()));
        }
        self.autoencoder.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.filter.min_duration >= 0.0) {
            return Err(Error::Config("filter.min_duration must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
