//! Data-scarcity protocol: retrain every variant on shrinking train+val
//! windows while the test block stays fixed.

use serde::{Deserialize, Serialize};

use super::metrics::{HorizonMetrics, MetricsReport, ReportRow};
use super::predict::{evaluate, ForecastData};
use crate::data::{split, Scaler, Split, SplitSpec, SubgraphSource, TrafficSeries};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::training::{finetune, train, TrainConfig, TransferScope};

pub const DEFAULT_RATES: [f64; 5] = [0.05, 0.10, 0.20, 0.40, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Full model trained from scratch.
    #[serde(rename = "flexible")]
    Flexible,
    /// Full model fine-tuned from a pretrained source model.
    #[serde(rename = "tr-flexible")]
    TrFlexible,
    /// Graph-free temporal-only ablation trained from scratch.
    #[serde(rename = "tcn")]
    Tcn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Flexible => "flexible",
            Variant::TrFlexible => "tr-flexible",
            Variant::Tcn => "tcn",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    pub variants: Vec<Variant>,
    /// Each variant is trained once per seed; rows report the seed mean.
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Split applied at every rate, with `scarcity` overridden.
    pub split: SplitSpec,
    pub scope: TransferScope,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rates: DEFAULT_RATES.to_vec(),
            variants: vec![Variant::Flexible, Variant::TrFlexible, Variant::Tcn],
            seeds: vec![0],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            scope: TransferScope::All,
        }
    }
}

/// Per-horizon mean of several reports over the same sample set.
pub fn average_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("nothing to average".into()))?;
    let k = reports.len() as f64;
    let horizons = first
        .horizons
        .iter()
        .enumerate()
        .map(|(i, h)| HorizonMetrics {
            mae: reports.iter().map(|r| r.horizons[i].mae).sum::<f64>() / k,
            rmse: reports.iter().map(|r| r.horizons[i].rmse).sum::<f64>() / k,
            ..h.clone()
        })
        .collect();
    Ok(MetricsReport {
        split: first.split.clone(),
        horizons,
    })
}

/// Runs the sweep on one dataset. `pretrained` is required for `TrFlexible`.
pub fn scarcity_sweep(
    raw: &TrafficSeries,
    source: &dyn SubgraphSource,
    sweep: &SweepConfig,
    pretrained: Option<&Model>,
) -> Result<Vec<ReportRow>> {
    if sweep.seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &rate in &sweep.rates {
        let spec = SplitSpec {
            scarcity: Some(rate),
            ..sweep.split.clone()
        };
        let mc = &sweep.model;
        let manifest = split(
            raw.n_stations(),
            raw.n_steps(),
            &spec,
            mc.history,
            mc.horizon,
        )?;
        let scaler = Scaler::fit_train(raw, &manifest)?;
        let data = ForecastData::new(raw, scaler, source);
        let train_s = manifest.samples(Split::Train, mc.history, mc.horizon);
        let val_s = manifest.samples(Split::Val, mc.history, mc.horizon);
        let test_s = manifest.samples(Split::Test, mc.history, mc.horizon);
        for &variant in &sweep.variants {
            let mut reports = Vec::new();
            for &seed in &sweep.seeds {
                let tc = TrainConfig {
                    seed,
                    ..sweep.train.clone()
                };
                let (model, _) = match variant {
                    Variant::Flexible => {
                        train(Model::new(mc.clone(), seed)?, &data, &train_s, &val_s, &tc)?
                    }
                    Variant::Tcn => {
                        let cfg = ModelConfig {
                            graph_free: true,
                            ..mc.clone()
                        };
                        train(Model::new(cfg, seed)?, &data, &train_s, &val_s, &tc)?
                    }
                    Variant::TrFlexible => {
                        let src = pretrained.ok_or_else(|| {
                            Error::Config("tr-flexible needs a pretrained source model".into())
                        })?;
                        finetune(src, sweep.scope, &data, &train_s, &val_s, &tc)?
                    }
                };
                reports.push(evaluate(&model, &data, &test_s, tc.batch_size, "test")?);
                log::info!(
                    "sweep rate {rate} {} seed {seed}: test MAE {:.4}",
                    variant.name(),
                    reports.last().unwrap().mean_mae()
                );
            }
            rows.push(ReportRow {
                variant: variant.name().to_string(),
                rate,
                report: average_reports(&reports)?,
            });
        }
    }
    Ok(rows)
}
