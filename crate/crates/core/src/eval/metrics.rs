use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// 1-based step ahead.
    pub horizon: usize,
    pub minutes: u32,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl HorizonMetrics {
    pub fn label(&self) -> String {
        format!("{}min", self.minutes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub horizons: Vec<HorizonMetrics>,
}

impl MetricsReport {
    /// Mean of the per-horizon MAEs.
    pub fn mean_mae(&self) -> f64 {
        self.horizons.iter().map(|h| h.mae).sum::<f64>() / self.horizons.len().max(1) as f64
    }

    pub fn mean_rmse(&self) -> f64 {
        self.horizons.iter().map(|h| h.rmse).sum::<f64>() / self.horizons.len().max(1) as f64
    }

    /// Plain-text table; values are divided by `scale` (e.g. `1e5`) for display.
    pub fn table(&self, scale: Option<f64>) -> String {
        let s = scale.unwrap_or(1.0);
        let unit = scale.map(|v| format!(" (×{v:e})")).unwrap_or_default();
        let mut out = format!("split {}{unit}\n", self.split);
        let _ = writeln!(
            out,
            "{:>8} {:>14} {:>14} {:>10}",
            "horizon", "MAE", "RMSE", "n"
        );
        for h in &self.horizons {
            let _ = writeln!(
                out,
                "{:>8} {:>14.4} {:>14.4} {:>10}",
                h.label(),
                h.mae / s,
                h.rmse / s,
                h.n
            );
        }
        out
    }
}

/// Per-horizon MAE and RMSE of row-major `[n, T_f]` predictions.
pub fn compute_metrics(
    predictions: &[f64],
    targets: &[f64],
    horizon: usize,
    resolution_minutes: u32,
    split: &str,
) -> Result<MetricsReport> {
    if predictions.len() != targets.len()
        || horizon == 0
        || !predictions.len().is_multiple_of(horizon)
    {
        return Err(Error::dim(format!(
            "{} predictions vs {} targets with horizon {horizon}",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len() / horizon;
    if n == 0 {
        return Err(Error::Config(format!(
            "cannot evaluate an empty {split} set"
        )));
    }
    let mut abs = vec![CompensatedSum::default(); horizon];
    let mut sq = vec![CompensatedSum::default(); horizon];
    for (p, y) in predictions
        .chunks_exact(horizon)
        .zip(targets.chunks_exact(horizon))
    {
        for h in 0..horizon {
            let e = p[h] - y[h];
            abs[h].add(e.abs());
            sq[h].add(e * e);
        }
    }
    let horizons = (0..horizon)
        .map(|h| {
            let mae = abs[h].value() / n as f64;
            let rmse = (sq[h].value() / n as f64).sqrt();
            HorizonMetrics {
                horizon: h + 1,
                minutes: resolution_minutes * (h as u32 + 1),
                mae,
                // Guard against rounding pushing RMSE a hair below MAE.
                rmse: rmse.max(mae),
                n,
            }
        })
        .collect();
    Ok(MetricsReport {
        split: split.to_string(),
        horizons,
    })
}

/// One line of the `variant,rate,horizon,mae,rmse,n` report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub rate: f64,
    pub report: MetricsReport,
}

pub fn write_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variant", "rate", "horizon", "mae", "rmse", "n"])?;
    for row in rows {
        for h in &row.report.horizons {
            w.write_record([
                row.variant.clone(),
                row.rate.to_string(),
                h.label(),
                h.mae.to_string(),
                h.rmse.to_string(),
                h.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rates as rows, variants as column groups of per-horizon MAE/RMSE.
pub fn format_table(rows: &[ReportRow], scale: Option<f64>) -> String {
    let s = scale.unwrap_or(1.0);
    let mut out = String::new();
    if let Some(v) = scale {
        let _ = writeln!(out, "values ×{v:e}");
    }
    let _ = write!(out, "{:<14} {:>6}", "variant", "rate");
    if let Some(first) = rows.first() {
        for h in &first.report.horizons {
            let _ = write!(
                out,
                " {:>11} {:>11}",
                format!("MAE@{}", h.label()),
                format!("RMSE@{}", h.label())
            );
        }
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{:<14} {:>6}", row.variant, row.rate);
        for h in &row.report.horizons {
            let _ = write!(out, " {:>11.4} {:>11.4}", h.mae / s, h.rmse / s);
        }
        out.push('\n');
    }
    out
}
