use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use crate::autodiff::{Tape, Var};
use crate::data::{assemble_batch, BatchOptions, Dropout, Sample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ForecastData};
use crate::model::{forward, update_running_stats, Bound, Mode, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Coefficient `λ` of the parameter-norm penalty.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub edge_dropout: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.009,
            weight_decay: 1e-5,
            batch_size: 4096,
            edge_dropout: 0.05,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!("weight decay {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.edge_dropout) {
            return Err(Error::Config(format!(
                "edge dropout must be in [0, 1), got {}",
                self.edge_dropout
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the training objective (scaled units).
    pub train_loss: f64,
    /// Mean over horizons, raw units.
    pub val_mae: f64,
    pub val_mae_per_horizon: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub stopped_early: bool,
    pub parameter_count: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Elapsed time; logged, not serialised, so report files stay reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// `mean |pred − target| + λ·‖Θ‖₂` over the learnable parameters.
pub fn loss(tape: &mut Tape, pred: Var, target: Var, params: &[Var], lambda: f64) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::dim(format!(
            "prediction {:?} vs target {:?}",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff)?;
    let mae = tape.mean_all(abs)?;
    if lambda == 0.0 || params.is_empty() {
        return Ok(mae);
    }
    let norm = tape.l2_norm(params)?;
    let reg = tape.scale(norm, lambda)?;
    tape.add(mae, reg)
}

/// One optimisation step on one batch; returns the batch loss.
fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    data: &ForecastData<'_>,
    samples: &[Sample],
    cfg: &TrainConfig,
    batch_index: u64,
) -> Result<f64> {
    let mc = &model.config;
    let opts = BatchOptions {
        history: mc.history,
        horizon: mc.horizon,
        dropout: (cfg.edge_dropout > 0.0).then_some(Dropout {
            p: cfg.edge_dropout,
            seed: cfg.seed,
            batch_index,
        }),
        centers_only: mc.graph_free,
    };
    let batch = assemble_batch(samples, data.source, &data.scaled, &opts)?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &model.params, true);
    let out = forward(
        &mut tape,
        &bound,
        &model.params.buffers,
        mc,
        &batch,
        Mode::Train,
    )?;
    let target = tape.constant(batch.targets.clone());
    let vars: Vec<Var> = bound.iter().map(|(_, v)| *v).collect();
    let l = loss(&mut tape, out.prediction, target, &vars, cfg.weight_decay)?;
    let value = tape.value(l).item();
    if !value.is_finite() {
        return Err(Error::numeric(
            "loss",
            format!("training diverged: loss {value} at batch {batch_index}"),
        ));
    }
    let mut grads = tape.backward(l)?;
    let mut named = BTreeMap::new();
    for (name, var) in bound.iter() {
        if let Some(g) = grads.take(*var) {
            if !g.all_finite() {
                return Err(Error::numeric(
                    name.clone(),
                    format!("non-finite gradient at batch {batch_index}"),
                ));
            }
            named.insert(name.clone(), g);
        }
    }
    adam.step(&mut model.params.params, &named)?;
    update_running_stats(&mut model.params, &out.stats)?;
    Ok(value)
}

/// Mini-batch training with early stopping on validation MAE. Returns the
/// parameters of the best validation epoch (or `model` unchanged when
/// `max_epochs` is 0).
pub fn train(
    model: Model,
    data: &ForecastData<'_>,
    train_samples: &[Sample],
    val_samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    model.config.validate()?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::Config(format!(
            "training needs samples in both splits ({} train, {} val)",
            train_samples.len(),
            val_samples.len()
        )));
    }
    let started = Instant::now();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
        best_val_mae: None,
        stopped_early: false,
        parameter_count: model.count_parameters(),
        train_samples: train_samples.len(),
        val_samples: val_samples.len(),
        wall_seconds: 0.0,
    };
    let mut best = model.clone();
    let mut current = model;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_samples.to_vec();
    let mut batch_index = 0u64;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let l = train_step(&mut current, &mut adam, data, chunk, cfg, batch_index)?;
            total += l * chunk.len() as f64;
            batch_index += 1;
        }
        let train_loss = total / order.len() as f64;
        let val = evaluate(&current, data, val_samples, cfg.batch_size, "val")?;
        let val_mae = val.mean_mae();
        log::info!(
            "epoch {epoch} train_loss {train_loss:.6} val_mae {val_mae:.4} [{}] {:.1}s",
            val.horizons
                .iter()
                .map(|h| format!("{}={:.4}", h.label(), h.mae))
                .collect::<Vec<_>>()
                .join(" "),
            epoch_start.elapsed().as_secs_f64()
        );
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mae,
            val_mae_per_horizon: val.horizons.iter().map(|h| h.mae).collect(),
        });
        if !val_mae.is_finite() {
            return Err(Error::numeric(
                "validation",
                format!("val MAE {val_mae} at epoch {epoch}"),
            ));
        }
        if report.best_val_mae.is_none_or(|b| val_mae < b) {
            report.best_val_mae = Some(val_mae);
            report.best_epoch = Some(epoch);
            best = current.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                log::info!(
                    "early stop after epoch {epoch}; best epoch {:?}",
                    report.best_epoch
                );
                break;
            }
        }
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((best, report))
}
