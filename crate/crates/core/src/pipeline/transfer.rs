use serde::{Deserialize, Serialize};

use super::train::{continue_training, train, EpochLoss, LoopSettings, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geograph::SpatialGraph;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    /// Parameter-name prefixes kept fixed, e.g. `layer0.` or `head.`.
    pub frozen: Vec<String>,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-4,
            patience: 10,
            seed: 0,
            frozen: Vec::new(),
        }
    }
}

impl FineTuneConfig {
    pub fn settings(&self) -> LoopSettings {
        LoopSettings {
            epochs: self.epochs,
            lr: self.lr,
            patience: self.patience,
            seed: self.seed,
            frozen: self.frozen.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct TransferConfig {
    pub pretrain: TrainConfig,
    pub finetune: FineTuneConfig,
    /// Standardize the target city with the source city's statistics instead
    /// of its own.
    pub source_stats: bool,
}


impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        if !(self.finetune.lr >= 0.0 && self.finetune.lr <= self.pretrain.lr) {
            return Err(Error::InvalidArgument(format!(
                "fine-tune lr {} must lie in [0, pretrain lr {}]",
                self.finetune.lr, self.pretrain.lr
            )));
        }
        if self.finetune.patience == 0 {
            return Err(Error::InvalidArgument("fine-tune patience must be at least 1".into()));
        }
        if self.pretrain.model.kind() == crate::model::ModelKind::Gbt {
            return Err(Error::InvalidArgument("boosted trees do not support transfer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub pretrained: Model,
    pub model: Model,
    pub pretrain_history: Vec<EpochLoss>,
    pub finetune_history: Vec<EpochLoss>,
}

pub(crate) fn check_schema(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.schema != b.schema {
        return Err(Error::SchemaMismatch(format!(
            "source schema {:016x} vs target schema {:016x}",
            a.schema.hash(),
            b.schema.hash()
        )));
    }
    Ok(())
}

/// Fine-tunes an already pretrained model on `target` with a fresh optimizer.
pub fn fine_tune(pretrained: &Model, target: &Dataset, g: &SpatialGraph, cfg: &FineTuneConfig) -> Result<(Model, Vec<EpochLoss>)> {
    if target.stats.is_none() {
        return Err(Error::InvalidArgument("fine-tuning expects a standardized dataset".into()));
    }
    let out = continue_training(pretrained.clone(), target, g, &cfg.settings())?;
    Ok((out.model, out.history))
}

/// Pretrains on the source city, then fine-tunes every layer not listed as
/// frozen on the target city.
pub fn transfer(
    source: &Dataset,
    g_source: &SpatialGraph,
    target: &Dataset,
    g_target: &SpatialGraph,
    cfg: &TransferConfig,
) -> Result<TransferOutcome> {
    cfg.validate()?;
    check_schema(source, target)?;
    let pre = train(source, g_source, &cfg.pretrain)?;
    let (model, finetune_history) = fine_tune(&pre.model, target, g_target, &cfg.finetune)?;
    Ok(TransferOutcome {
        pretrained: pre.model,
        model,
        pretrain_history: pre.history,
        finetune_history,
    })
}
