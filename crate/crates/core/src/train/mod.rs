//! Training configuration, optimisation, the training loop and evaluation.

mod data;
mod infer;
mod metrics;
mod optim;
mod run;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentPolicy, MixupGranularity};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{EncoderKind, EncoderSpec, HeadSpec, Model};
use crate::volume::{Shape3, Task};

pub use data::{worker_count, NUM_WORKERS_ENV};
pub use infer::{eval_view, evaluate, load_model, predict, EvalReport, Prediction};
pub use metrics::{confusion_matrix, macro_f1};
pub use optim::{AdamParams, AdamW};
pub use run::{train, TrainSummary, METRICS_HEADER};
pub use schedule::{drop_epochs, lr_at};

/// Architecture of the encoder and heads. The input shape is the augmentation
/// output shape and the class count follows from the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
    pub embedding_dim: usize,
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
}

fn default_encoder() -> EncoderKind {
    EncoderKind::Tiny3d
}

fn default_base_width() -> usize {
    4
}

fn default_projection_dim() -> usize {
    128
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Tiny3d,
            embedding_dim: 32,
            base_width: 4,
            projection_dim: default_projection_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::lr_drop_points")]
    pub lr_drop_points: Vec<f64>,
    #[serde(default = "defaults::drop_factor")]
    pub drop_factor: f64,
    #[serde(default = "defaults::mixup_alpha")]
    pub mixup_alpha: f64,
    #[serde(default)]
    pub mixup_granularity: MixupGranularity,
    #[serde(default)]
    pub seed: u64,
    /// Shape every scan is resampled to when loaded, before augmentation.
    pub load_shape: Shape3,
    /// Draw each batch position from a uniformly chosen class instead of
    /// shuffling the dataset.
    #[serde(default)]
    pub balanced_sampling: bool,
    #[serde(default = "defaults::num_workers")]
    pub num_workers: usize,
    /// Keep loaded scans in memory across epochs.
    #[serde(default = "defaults::cache_volumes")]
    pub cache_volumes: bool,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub loss_weights: LossWeights,
    pub augment: AugmentPolicy,
    #[serde(default)]
    pub model: ModelConfig,
}

mod defaults {
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        8
    }
    pub fn lr() -> f64 {
        1e-5
    }
    pub fn weight_decay() -> f64 {
        1e-5
    }
    pub fn lr_drop_points() -> Vec<f64> {
        vec![0.3, 0.8]
    }
    pub fn drop_factor() -> f64 {
        0.1
    }
    pub fn mixup_alpha() -> f64 {
        0.2
    }
    pub fn num_workers() -> usize {
        1
    }
    pub fn cache_volumes() -> bool {
        true
    }
}

impl TrainConfig {
    /// Defaults for `task` with scans loaded at `load_shape` and fed to the
    /// model at `input_shape`. Detection z-crops when the depths differ.
    pub fn new(task: Task, load_shape: Shape3, input_shape: Shape3) -> Self {
        let mut augment = match task {
            Task::Detection => AugmentPolicy::detection(input_shape),
            Task::Severity => AugmentPolicy::severity(input_shape),
        };
        if load_shape.d == input_shape.d {
            augment.z_crop_depth = None;
        }
        TrainConfig {
            task,
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            weight_decay: defaults::weight_decay(),
            lr_drop_points: defaults::lr_drop_points(),
            drop_factor: defaults::drop_factor(),
            mixup_alpha: defaults::mixup_alpha(),
            mixup_granularity: MixupGranularity::default(),
            seed: 0,
            load_shape,
            balanced_sampling: false,
            num_workers: defaults::num_workers(),
            cache_volumes: defaults::cache_volumes(),
            adam: AdamParams::default(),
            loss_weights: LossWeights::default(),
            augment,
            model: ModelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.batch_size < 1 {
            return cfg("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return cfg(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return cfg(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(self.drop_factor > 0.0 && self.drop_factor <= 1.0) {
            return cfg(format!(
                "drop_factor must be in (0, 1], got {}",
                self.drop_factor
            ));
        }
        let mut prev = 0.0;
        for &p in &self.lr_drop_points {
            if !(p > prev && p < 1.0) {
                return cfg(format!(
                    "lr_drop_points must be strictly increasing in (0, 1), got {:?}",
                    self.lr_drop_points
                ));
            }
            prev = p;
        }
        if !(self.mixup_alpha > 0.0) || !self.mixup_alpha.is_finite() {
            return cfg(format!(
                "mixup_alpha must be positive, got {}",
                self.mixup_alpha
            ));
        }
        if self.num_workers < 1 {
            return cfg("num_workers must be at least 1".into());
        }
        self.load_shape.validate()?;
        self.adam.validate()?;
        self.loss_weights.validate()?;
        self.augment.validate()?;
        if let Some(z) = self.augment.z_crop_depth {
            if z > self.load_shape.d {
                return cfg(format!(
                    "z_crop_depth {z} exceeds load depth {}",
                    self.load_shape.d
                ));
            }
        }
        self.encoder_spec().validate()?;
        self.head_spec().validate()
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            name: self.model.encoder,
            embedding_dim: self.model.embedding_dim,
            input_shape: self.augment.output_shape,
            base_width: self.model.base_width,
        }
    }

    pub fn head_spec(&self) -> HeadSpec {
        HeadSpec {
            projection_dim: self.model.projection_dim,
            num_classes: self.task.num_classes(),
        }
    }

    /// A freshly initialised model for this configuration.
    pub fn build_model(&self) -> Result<Model> {
        Model::new(self.encoder_spec(), self.head_spec(), self.seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("embedded config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::new(
            Task::Detection,
            Shape3::new(16, 32, 32),
            Shape3::new(8, 32, 32),
        )
    }

    #[test]
    fn defaults_validate() {
        let c = cfg();
        c.validate().unwrap();
        assert_eq!(c.epochs, 100);
        assert_eq!(c.lr, 1e-5);
        assert_eq!(c.weight_decay, 1e-5);
        assert_eq!(c.lr_drop_points, vec![0.3, 0.8]);
        assert_eq!(c.augment.z_crop_depth, Some(8));
    }

    #[test]
    fn bad_values_rejected() {
        let bad: Vec<fn(&mut TrainConfig)> = vec![
            |c| c.batch_size = 0,
            |c| c.lr = 0.0,
            |c| c.lr_drop_points = vec![0.8, 0.3],
            |c| c.lr_drop_points = vec![0.0],
            |c| c.lr_drop_points = vec![1.0],
            |c| c.mixup_alpha = -1.0,
            |c| c.augment.z_crop_depth = Some(17),
            |c| c.model.embedding_dim = 0,
        ];
        for f in bad {
            let mut c = cfg();
            f(&mut c);
            assert!(matches!(
                c.validate(),
                Err(Error::Config(_)) | Err(Error::Shape(_))
            ));
        }
    }

    #[test]
    fn json_round_trip() {
        let c = cfg();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&cfg().to_json()).unwrap();
        v["learning_rate"] = 1.0.into();
        assert!(TrainConfig::from_json(&v.to_string()).is_err());
    }
}
