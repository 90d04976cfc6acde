//! Run configuration: TOML with `[model]`, `[training]`, `[mapping]`,
//! and `[evaluation]` sections. Unknown keys are rejected to catch typos;
//! missing keys take the desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::training::{LossWeights, TrainOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoInit {
    /// On exactly when the bead count is 3 (planar coarse geometry).
    Auto,
    On,
    Off,
}

impl PseudoInit {
    pub fn resolve(self, num_beads: usize) -> bool {
        match self {
            PseudoInit::Auto => num_beads == 3,
            PseudoInit::On => true,
            PseudoInit::Off => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// "cgvae", "linear", or "mlp".
    pub kind: String,
    pub feature_dim: usize,
    pub rbf_dim: usize,
    pub t_enc: usize,
    pub t_prior: usize,
    pub t_dec: usize,
    pub fg_cutoff: f64,
    pub cg_cutoff: f64,
    pub pseudo_init: PseudoInit,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "cgvae".to_string(),
            feature_dim: 32,
            rbf_dim: 8,
            t_enc: 2,
            t_prior: 2,
            t_dec: 3,
            fg_cutoff: 3.0,
            cg_cutoff: 9.5,
            pseudo_init: PseudoInit::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub factor: f64,
    pub seed: u64,
    pub gamma: f64,
    pub beta: f64,
    pub val_fraction: f64,
    /// Graph-loss weight used when training the baselines.
    pub baseline_gamma: f64,
    pub multihop: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 120,
            batch_size: 16,
            learning_rate: 1e-3,
            patience: 15,
            factor: 0.3,
            seed: 0,
            gamma: 25.0,
            beta: 0.05,
            val_fraction: 0.1,
            baseline_gamma: 5.0,
            multihop: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingSection {
    pub beads: usize,
    /// "uniform" or "mass".
    pub weights: String,
}

impl Default for MappingSection {
    fn default() -> Self {
        MappingSection {
            beads: 3,
            weights: "uniform".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub samples: usize,
    pub folds: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            samples: 32,
            folds: 5,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub training: TrainingSection,
    pub mapping: MappingSection,
    pub evaluation: EvaluationSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.model.kind.as_str(), "cgvae" | "linear" | "mlp") {
            return Err(Error::Config(format!(
                "model.kind must be cgvae, linear, or mlp (got '{}')",
                self.model.kind
            )));
        }
        if self.model.feature_dim == 0 || self.model.rbf_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".to_string()));
        }
        if self.model.fg_cutoff <= 0.0 || self.model.cg_cutoff <= 0.0 {
            return Err(Error::Config("cutoffs must be positive".to_string()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be positive".to_string()));
        }
        if !(0.0 < self.training.factor && self.training.factor < 1.0) {
            return Err(Error::Config("training.factor must lie in (0,1)".to_string()));
        }
        if self.training.gamma < 0.0 || self.training.beta < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".to_string()));
        }
        if !(0.0..1.0).contains(&self.training.val_fraction) {
            return Err(Error::Config("training.val_fraction must lie in [0,1)".to_string()));
        }
        if self.training.multihop == 0 {
            return Err(Error::Config("training.multihop must be at least 1".to_string()));
        }
        if self.mapping.beads == 0 {
            return Err(Error::Config("mapping.beads must be positive".to_string()));
        }
        crate::geometry::WeightMode::parse(&self.mapping.weights)?;
        if self.evaluation.samples == 0 || self.evaluation.folds == 0 {
            return Err(Error::Config("evaluation counts must be positive".to_string()));
        }
        Ok(())
    }

    pub fn model_dims(&self, num_beads: usize) -> ModelDims {
        ModelDims {
            feature_dim: self.model.feature_dim,
            rbf_dim: self.model.rbf_dim,
            t_enc: self.model.t_enc,
            t_prior: self.model.t_prior,
            t_dec: self.model.t_dec,
            fg_cutoff: self.model.fg_cutoff,
            cg_cutoff: self.model.cg_cutoff,
            pseudo_init: self.model.pseudo_init.resolve(num_beads),
        }
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        Ok(TrainOptions {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            patience: self.training.patience,
            factor: self.training.factor,
            seed: self.training.seed,
            weights: LossWeights::new(self.training.gamma, self.training.beta)?,
            val_fraction: self.training.val_fraction,
        })
    }
}
