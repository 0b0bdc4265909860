use super::metrics::{compute_metrics, MetricsReport};
use crate::data::{assemble_batch, BatchOptions, Sample, Scaler, SubgraphSource, TrafficSeries};
use crate::error::{Error, Result};
use crate::model::Model;

/// Raw series, its scaled copy and where to find subgraphs.
pub struct ForecastData<'a> {
    pub raw: &'a TrafficSeries,
    pub scaled: TrafficSeries,
    pub scaler: Scaler,
    pub source: &'a dyn SubgraphSource,
}

impl<'a> ForecastData<'a> {
    pub fn new(raw: &'a TrafficSeries, scaler: Scaler, source: &'a dyn SubgraphSource) -> Self {
        ForecastData {
            raw,
            scaled: scaler.transform_series(raw),
            scaler,
            source,
        }
    }

    /// Same series and subgraphs under a different scaler.
    pub fn rescaled(&self, scaler: Scaler) -> ForecastData<'a> {
        ForecastData::new(self.raw, scaler, self.source)
    }
}

/// Eval-mode predictions in raw units, row-major `[samples, T_f]`.
pub fn predict_raw(
    model: &Model,
    data: &ForecastData<'_>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be ≥ 1".into()));
    }
    let cfg = &model.config;
    let opts = BatchOptions {
        history: cfg.history,
        horizon: cfg.horizon,
        dropout: None,
        centers_only: cfg.graph_free,
    };
    let mut out = Vec::with_capacity(samples.len() * cfg.horizon);
    for chunk in samples.chunks(batch_size) {
        let batch = assemble_batch(chunk, data.source, &data.scaled, &opts)?;
        let pred = model.predict(&batch)?;
        out.extend(pred.data().iter().map(|&z| data.scaler.inverse(z)));
    }
    Ok(out)
}

/// Raw-unit targets `[samples, T_f]`.
pub fn raw_targets(
    series: &TrafficSeries,
    samples: &[Sample],
    history: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len() * horizon);
    for s in samples {
        out.extend_from_slice(series.window(s.station, s.t, history, horizon)?.1);
    }
    Ok(out)
}

/// Per-horizon metrics of `model` over `samples`, in raw units.
pub fn evaluate(
    model: &Model,
    data: &ForecastData<'_>,
    samples: &[Sample],
    batch_size: usize,
    split: &str,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "cannot evaluate an empty {split} set"
        )));
    }
    let cfg = &model.config;
    let pred = predict_raw(model, data, samples, batch_size)?;
    let target = raw_targets(data.raw, samples, cfg.history, cfg.horizon)?;
    compute_metrics(
        &pred,
        &target,
        cfg.horizon,
        data.raw.resolution_minutes,
        split,
    )
}
