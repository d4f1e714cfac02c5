//! Mini-batch SGD with momentum over paired cases, deterministic from
//! (dataset bytes, config), plus checkpoint I/O and the relation-block-count
//! ablation driver.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::backward;
use crate::heads::LossWeights;
use crate::metrics::{evaluate, EvalConfig, MetricsReport};
use crate::model::{ModelDims, ModelParams};
use crate::numerics::Rng;
use crate::relation::DEFAULT_WAVELENGTH;
use crate::synth::PairedSample;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
    #[serde(default = "default_d_k")]
    pub d_k: usize,
    #[serde(default = "default_d_emb")]
    pub d_emb: usize,
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    0.001
}
fn default_momentum() -> f64 {
    0.9
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    2
}
fn default_n_blocks() -> usize {
    3
}
fn default_d_k() -> usize {
    64
}
fn default_d_emb() -> usize {
    64
}
fn default_wavelength() -> f64 {
    DEFAULT_WAVELENGTH
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            momentum: default_momentum(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            n_blocks: default_n_blocks(),
            d_k: default_d_k(),
            d_emb: default_d_emb(),
            wavelength: default_wavelength(),
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0,1)".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.loss_weights.validate()
    }

    pub fn dims(&self, d_f: usize) -> ModelDims {
        ModelDims {
            d_f,
            d_k: self.d_k,
            d_emb: self.d_emb,
            n_blocks: self.n_blocks,
            wavelength: self.wavelength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelParams,
    pub config: TrainConfig,
    pub epoch: usize,
    pub train_loss_history: Vec<f64>,
}

/// Train a fresh model. Batch gradients are averaged in a fixed order, the
/// epoch ordering is shuffled deterministically from the seed, and a
/// non-finite loss aborts with the offending epoch/step named.
pub fn train(dataset: &[PairedSample], cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Domain("train: dataset is empty".into()));
    }
    let d_f = dataset[0].feature_len();
    for s in dataset {
        s.validate()?;
        if s.feature_len() != d_f {
            return Err(Error::Shape("train: inconsistent feature lengths".into()));
        }
    }

    let root = Rng::from_seed(cfg.seed);
    let mut model = ModelParams::init(cfg.dims(d_f), &mut root.derive(0))?;
    let mut velocity = model.zeros_like();
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut epoch_rng = root.derive(1 + epoch as u64);
        epoch_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad_sum = model.zeros_like();
            for &idx in batch {
                let (loss, grads) = backward(&dataset[idx], &model, &cfg.loss_weights)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss diverged at epoch {epoch}, step {step}, case {idx}"
                    )));
                }
                epoch_loss += loss;
                grad_sum.add_scaled(&grads, 1.0)?;
            }
            grad_sum.scale(1.0 / batch.len() as f64);
            velocity.scale(cfg.momentum);
            velocity.add_scaled(&grad_sum, 1.0)?;
            model.add_scaled(&velocity, -cfg.learning_rate)?;
        }
        history.push(epoch_loss / dataset.len() as f64);
    }

    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        model,
        config: cfg.clone(),
        epoch: cfg.epochs,
        train_loss_history: history,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = serde_json::to_string(ckpt).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} unsupported (expected {})",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    ckpt.model.validate()?;
    if ckpt.train_loss_history.len() != ckpt.epoch {
        return Err(Error::Config(
            "checkpoint loss history does not match completed epochs".into(),
        ));
    }
    Ok(ckpt)
}

/// Train one model per relation-block count N with identical seed and data,
/// evaluate on the test split, and return rows sorted by N.
pub fn run_ablation(
    dataset_train: &[PairedSample],
    dataset_test: &[PairedSample],
    base_cfg: &TrainConfig,
    n_values: &[usize],
) -> Result<Vec<(usize, MetricsReport)>> {
    if n_values.is_empty() {
        return Err(Error::Config("ablation needs at least one N value".into()));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let cfg = TrainConfig {
            n_blocks: n,
            ..base_cfg.clone()
        };
        let ckpt = train(dataset_train, &cfg)?;
        let report = evaluate(&ckpt.model, dataset_test, &EvalConfig::default())?;
        rows.push((n, report));
    }
    rows.sort_by_key(|(n, _)| *n);
    Ok(rows)
}
