use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{ModelConfig, Variant};
use crate::phantom::Extents;

/// Every training hyper-parameter. Missing JSON fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub depth: usize,
    pub base_channels: usize,
    pub patch_extents: Extents,
    pub weights: LossWeights,
    pub learning_rate: f32,
    pub betas: (f32, f32),
    pub eps: f32,
    pub steps: usize,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Rescale gradients whose global L2 norm exceeds this; `null` disables.
    pub grad_clip_norm: Option<f32>,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Mmtsn,
            depth: 3,
            base_channels: 8,
            patch_extents: [16, 16, 16],
            weights: LossWeights::default(),
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            steps: 100,
            seed: 0,
            checkpoint_every: 0,
            grad_clip_norm: Some(5.0),
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            depth: self.depth,
            base_channels: self.base_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model();
        model.validate()?;
        self.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be ≥ 1".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("grad_clip_norm must be > 0, got {c}")));
            }
        }
        let m = model.extent_multiple();
        if self.patch_extents.iter().any(|&e| e == 0 || e % m != 0) {
            return Err(Error::Config(format!(
                "patch extents {:?} must be positive multiples of {m} for depth {}",
                self.patch_extents, self.depth
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid train config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Canonical pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
