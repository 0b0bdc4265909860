use serde::{Deserialize, Serialize};

use super::series::TrafficSeries;
use super::split::SplitManifest;
use crate::error::{Error, Result};

/// Global z-score: `(x − mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Default for Scaler {
    fn default() -> Self {
        Scaler {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Scaler {
    /// Fits on the given values. Zero spread falls back to `std = 1`.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
        for v in values {
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
        }
        if n == 0 {
            return Err(Error::Config("cannot fit a scaler on zero values".into()));
        }
        let mut std = (m2 / n as f64).sqrt();
        if !(std > 0.0) || !std.is_finite() {
            log::warn!("training data has zero spread; scaling by 1");
            std = 1.0;
        }
        Ok(Scaler { mean, std })
    }

    /// Fits on the training stations over the retained training timesteps.
    pub fn fit_train(series: &TrafficSeries, manifest: &SplitManifest) -> Result<Self> {
        let b = manifest.fit_range();
        Scaler::fit(
            manifest
                .train_nodes
                .iter()
                .flat_map(|&i| series.row(i)[b.start..b.end].iter().copied()),
        )
    }

    pub fn transform(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn transform_series(&self, series: &TrafficSeries) -> TrafficSeries {
        let mut out = series.clone();
        for v in out.values_mut() {
            *v = self.transform(*v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split::{split, SplitSpec};

    #[test]
    fn constant_series_scales_to_zero() {
        let s = Scaler::fit(std::iter::repeat_n(4.0, 10)).unwrap();
        assert_eq!(s.std, 1.0);
        assert_eq!(s.transform(4.0), 0.0);
    }

    #[test]
    fn round_trip() {
        let s = Scaler::fit([1.0, 5.0, 9.0, 1e6]).unwrap();
        for x in [0.0, 3.25, 1e6, 12345.678] {
            assert!((s.inverse(s.transform(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn test_values_never_move_the_scaler() {
        let mut series = TrafficSeries::new(
            vec!["a".into(), "b".into()],
            100,
            (0..200).map(f64::from).collect(),
        )
        .unwrap();
        let m = split(2, 100, &SplitSpec::default(), 3, 2).unwrap();
        let before = Scaler::fit_train(&series, &m).unwrap();
        for i in 0..2 {
            for v in &mut series.row_mut(i)[m.test.start..] {
                *v *= 1000.0;
            }
        }
        assert_eq!(Scaler::fit_train(&series, &m).unwrap(), before);
    }

    #[test]
    fn empty_fit_is_config_error() {
        assert!(matches!(
            Scaler::fit(std::iter::empty()),
            Err(Error::Config(_))
        ));
    }
}
