//! Seeded synthetic city: stations scattered in a square, traffic made of
//! daily and weekly cycles, a spatially propagating latent component and noise.
//!
//! The spatial part is driven by a handful of AR(1) sources placed in the
//! same square. Each station sees every source through a distance-decaying
//! gain and with a delay proportional to its distance from the source, so
//! stations near each other share the latent signal and the one closer to a
//! source sees it a few steps earlier — information a neighbourhood model can
//! exploit and a station-only model cannot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::series::TrafficSeries;
use crate::error::{Error, Result};
use crate::graph::{CoordinateFrame, Station, StationMap};

/// Steps per day at 15-minute resolution.
pub const DAY_STEPS: usize = 96;
pub const WEEK_STEPS: usize = 7 * DAY_STEPS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_stations: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Side of the square; `None` scales it so density matches 50 stations in 20 km.
    pub box_km: Option<f64>,
    /// Per-station base volume drawn log-uniformly from this range.
    pub base_range: [f64; 2],
    pub daily_amplitude: f64,
    /// Per-station jitter of the daily phase, in radians.
    pub phase_jitter: f64,
    pub weekly_amplitude: f64,
    pub spatial_amplitude: f64,
    pub noise_amplitude: f64,
    pub n_sources: usize,
    /// AR(1) coefficient of every latent source.
    pub source_ar: f64,
    /// Length scale of the source gain `exp(−d / ℓ)`.
    pub source_length_km: f64,
    /// Distance the latent signal travels per step.
    pub km_per_step: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_stations: 50,
            n_steps: 2000,
            seed: 0,
            box_km: None,
            base_range: [2e5, 8e5],
            daily_amplitude: 0.6,
            phase_jitter: 0.3,
            weekly_amplitude: 0.1,
            spatial_amplitude: 0.3,
            noise_amplitude: 0.05,
            n_sources: 4,
            source_ar: 0.9,
            source_length_km: 5.0,
            km_per_step: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn box_side_km(&self) -> f64 {
        self.box_km
            .unwrap_or_else(|| 20.0 * (self.n_stations as f64 / 50.0).sqrt())
    }
}

/// Generates a planar station map and its traffic. Identical configs give
/// bitwise-identical output.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(StationMap, TrafficSeries)> {
    if cfg.n_stations < 2 {
        return Err(Error::Config(format!(
            "a synthetic graph needs at least 2 stations, got {}",
            cfg.n_stations
        )));
    }
    if cfg.n_steps == 0 {
        return Err(Error::Config(
            "synthetic series needs at least one step".into(),
        ));
    }
    if !(cfg.source_ar.abs() < 1.0) || cfg.km_per_step <= 0.0 || cfg.source_length_km <= 0.0 {
        return Err(Error::Config(
            "source_ar must be in (−1, 1); km_per_step and source_length_km positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let side_m = cfg.box_side_km() * 1000.0;
    let width = (cfg.n_stations - 1).to_string().len();

    let stations: Vec<Station> = (0..cfg.n_stations)
        .map(|i| Station {
            id: format!("s{i:0width$}"),
            position: [rng.random::<f64>() * side_m, rng.random::<f64>() * side_m],
        })
        .collect();
    let sources: Vec<[f64; 2]> = (0..cfg.n_sources)
        .map(|_| [rng.random::<f64>() * side_m, rng.random::<f64>() * side_m])
        .collect();

    // Station responses to each source: gain and delay.
    let links: Vec<Vec<(f64, usize)>> = stations
        .iter()
        .map(|s| {
            sources
                .iter()
                .map(|src| {
                    let d = CoordinateFrame::Planar.distance_km(s.position, *src);
                    let delay = (d / cfg.km_per_step).round() as usize;
                    ((-d / cfg.source_length_km).exp(), delay)
                })
                .collect()
        })
        .collect();
    let max_delay = links.iter().flatten().map(|l| l.1).max().unwrap_or(0);

    // Unit-variance AR(1) sources with a burn-in so they start stationary.
    let innovation =
        Normal::new(0.0, (1.0 - cfg.source_ar * cfg.source_ar).sqrt()).expect("finite std");
    let src_len = cfg.n_steps + max_delay;
    let signals: Vec<Vec<f64>> = (0..cfg.n_sources)
        .map(|_| {
            let mut x = innovation.sample(&mut rng) / (1.0 - cfg.source_ar.powi(2)).sqrt();
            (0..src_len)
                .map(|_| {
                    x = cfg.source_ar * x + innovation.sample(&mut rng);
                    x
                })
                .collect()
        })
        .collect();

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let (lo, hi) = (cfg.base_range[0].ln(), cfg.base_range[1].ln());
    let mut values = Vec::with_capacity(cfg.n_stations * cfg.n_steps);
    for link in &links {
        let base = (lo + (hi - lo) * rng.random::<f64>()).exp();
        let phase = cfg.phase_jitter * (2.0 * rng.random::<f64>() - 1.0);
        let gain_norm = link.iter().map(|l| l.0 * l.0).sum::<f64>().sqrt();
        for t in 0..cfg.n_steps {
            let day = (std::f64::consts::TAU * t as f64 / DAY_STEPS as f64 + phase).sin();
            let week = (std::f64::consts::TAU * t as f64 / WEEK_STEPS as f64).sin();
            let spatial = if gain_norm > 0.0 {
                link.iter()
                    .zip(&signals)
                    .map(|(&(g, delay), s)| g * s[t + max_delay - delay])
                    .sum::<f64>()
                    / gain_norm
            } else {
                0.0
            };
            let level = 1.0
                + cfg.daily_amplitude * day
                + cfg.weekly_amplitude * week
                + cfg.spatial_amplitude * spatial
                + cfg.noise_amplitude * unit.sample(&mut rng);
            values.push(base * level.max(0.0));
        }
    }

    let ids = stations.iter().map(|s| s.id.clone()).collect();
    let map = StationMap::new(CoordinateFrame::Planar, stations)?;
    let series = TrafficSeries::new(ids, cfg.n_steps, values)?;
    Ok((map, series))
}
