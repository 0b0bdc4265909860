//! Chronological time blocks × node partitions → sample sets.
//!
//! A sample `(i, t)` forecasts `X_i[t .. t+T_f]` from `X_i[t−T_h .. t]`. It
//! belongs to the time block `[s, e)` when its target lies inside the block
//! (`t ≥ s`, `t + T_f ≤ e`) and its history does not reach before the
//! retained data (`t − T_h ≥ floor`). Histories of validation and test samples
//! may therefore look back into the preceding block, but no target ever
//! crosses a block boundary and nothing used for training touches the test
//! block.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Disjoint node sets per split.
    Inductive,
    /// Every split uses every node.
    Transductive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!(
                "unknown split {s:?} (train|val|test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Train/val/test fractions of the timeline.
    pub time_fractions: [f64; 3],
    /// Train/val/test fractions of the stations (inductive mode only).
    pub node_fractions: [f64; 3],
    pub mode: SplitMode,
    /// Fraction of the train+val timeline kept, newest first.
    pub scarcity: Option<f64>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            time_fractions: [0.7, 0.1, 0.2],
            node_fractions: [0.7, 0.1, 0.2],
            mode: SplitMode::Transductive,
            scarcity: None,
            seed: 0,
        }
    }
}

/// Half-open `[start, end)` range of timesteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// One forecasting sample: station row and forecast origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sample {
    pub station: usize,
    pub t: usize,
}

/// Resolved split: concrete time blocks and node lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub n_steps: usize,
    /// Oldest timestep still in use (after scarcity trimming).
    pub floor: usize,
    pub train: Block,
    pub val: Block,
    pub test: Block,
    pub train_nodes: Vec<usize>,
    pub val_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
}

fn check_fractions(name: &str, f: &[f64; 3]) -> Result<()> {
    if f.iter().any(|x| !x.is_finite() || *x < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{name} fractions must be non-negative and sum to 1, got {f:?}"
        )));
    }
    Ok(())
}

/// Resolves `spec` for a dataset of `n_stations × n_steps` and checks that
/// every split has at least one `history`/`horizon` window.
pub fn split(
    n_stations: usize,
    n_steps: usize,
    spec: &SplitSpec,
    history: usize,
    horizon: usize,
) -> Result<SplitManifest> {
    check_fractions("time", &spec.time_fractions)?;
    let train_end = (spec.time_fractions[0] * n_steps as f64).round() as usize;
    let val_end =
        ((spec.time_fractions[0] + spec.time_fractions[1]) * n_steps as f64).round() as usize;
    let val_end = val_end.clamp(train_end, n_steps);

    let (floor, train, val) = match spec.scarcity {
        None => (
            0,
            Block {
                start: 0,
                end: train_end,
            },
            Block {
                start: train_end,
                end: val_end,
            },
        ),
        Some(r) if (r - 1.0).abs() < 1e-12 => (
            0,
            Block {
                start: 0,
                end: train_end,
            },
            Block {
                start: train_end,
                end: val_end,
            },
        ),
        Some(r) => {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!(
                    "scarcity rate must be in (0, 1], got {r}"
                )));
            }
            let kept = ((r * val_end as f64).round() as usize).min(val_end);
            // Validation keeps a 1:7 proportion to training inside the kept window.
            let val_len = (kept as f64 / 8.0).round() as usize;
            let floor = val_end - kept;
            let split_at = val_end - val_len;
            (
                floor,
                Block {
                    start: floor,
                    end: split_at,
                },
                Block {
                    start: split_at,
                    end: val_end,
                },
            )
        }
    };
    let test = Block {
        start: val_end,
        end: n_steps,
    };

    let (train_nodes, val_nodes, test_nodes) = match spec.mode {
        SplitMode::Transductive => {
            let all: Vec<usize> = (0..n_stations).collect();
            (all.clone(), all.clone(), all)
        }
        SplitMode::Inductive => {
            check_fractions("node", &spec.node_fractions)?;
            let mut order: Vec<usize> = (0..n_stations).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            let n_train = (spec.node_fractions[0] * n_stations as f64).round() as usize;
            let n_val = ((spec.node_fractions[0] + spec.node_fractions[1]) * n_stations as f64)
                .round() as usize
                - n_train;
            let mut train: Vec<usize> = order[..n_train].to_vec();
            let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
            let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
            train.sort_unstable();
            val.sort_unstable();
            test.sort_unstable();
            (train, val, test)
        }
    };

    let manifest = SplitManifest {
        spec: spec.clone(),
        n_steps,
        floor,
        train,
        val,
        test,
        train_nodes,
        val_nodes,
        test_nodes,
    };
    for s in Split::ALL {
        if manifest.origins(s, history, horizon).is_empty() {
            return Err(Error::Config(format!(
                "{} split {:?} holds no complete window of {history}+{horizon} steps",
                s.name(),
                manifest.block(s)
            )));
        }
        if manifest.nodes(s).is_empty() {
            return Err(Error::Config(format!("{} split has no stations", s.name())));
        }
    }
    Ok(manifest)
}

impl SplitManifest {
    pub fn block(&self, s: Split) -> Block {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn nodes(&self, s: Split) -> &[usize] {
        match s {
            Split::Train => &self.train_nodes,
            Split::Val => &self.val_nodes,
            Split::Test => &self.test_nodes,
        }
    }

    /// Forecast origins `t` whose window fits in the split's block.
    pub fn origins(&self, s: Split, history: usize, horizon: usize) -> std::ops::Range<usize> {
        let b = self.block(s);
        let lo = b.start.max(self.floor + history);
        let hi = (b.end + 1).saturating_sub(horizon);
        lo..hi.max(lo)
    }

    /// Cartesian product of the split's nodes and origins, node-major.
    pub fn samples(&self, s: Split, history: usize, horizon: usize) -> Vec<Sample> {
        let origins = self.origins(s, history, horizon);
        self.nodes(s)
            .iter()
            .flat_map(|&station| origins.clone().map(move |t| Sample { station, t }))
            .collect()
    }

    /// Timesteps that feed the scaler: the retained part of the training block.
    pub fn fit_range(&self) -> Block {
        self.train
    }
}
