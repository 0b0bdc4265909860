use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a subgraph's node features become one graph-level feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// The center node's features only.
    Target,
    Sum,
    Max,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Pooling::Target),
            "sum" => Ok(Pooling::Sum),
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::Config(format!(
                "unknown pooling {s:?} (target|sum|max|mean)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input window length `T_h`.
    pub history: usize,
    /// Forecast length `T_f`.
    pub horizon: usize,
    /// Hidden channels `C`.
    pub channels: usize,
    /// Number of spatiotemporal blocks `L`.
    pub layers: usize,
    /// Kernel sizes of the parallel convolution branches.
    pub kernels: Vec<usize>,
    /// Dilation base `d`: block `l` (1-based, read-in is 0) dilates by `d^l`.
    pub dilation: usize,
    pub pooling: Pooling,
    /// Drop graph aggregation entirely (the temporal-only ablation).
    pub graph_free: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            history: 12,
            horizon: 3,
            channels: 64,
            layers: 2,
            kernels: vec![1, 3],
            dilation: 1,
            pooling: Pooling::Target,
            graph_free: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.kernels.is_empty() || self.kernels.contains(&0) {
            return fail(format!("kernel sizes must be ≥ 1, got {:?}", self.kernels));
        }
        if self.channels == 0 || !self.channels.is_multiple_of(self.kernels.len()) {
            return fail(format!(
                "channels ({}) must be a positive multiple of the number of kernels ({})",
                self.channels,
                self.kernels.len()
            ));
        }
        let kmax = *self.kernels.iter().max().unwrap();
        if self.history < kmax {
            return fail(format!(
                "history ({}) must be at least the largest kernel ({kmax})",
                self.history
            ));
        }
        if self.layers == 0 {
            return fail("at least one spatiotemporal layer is required".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be ≥ 1".into());
        }
        if self.dilation == 0 {
            return fail("dilation base must be ≥ 1".into());
        }
        Ok(())
    }

    /// Output channels of each kernel branch.
    pub fn branch_channels(&self) -> usize {
        self.channels / self.kernels.len()
    }

    /// Dilation of the convolution at `layer_index` (read-in is 0).
    pub fn dilation_at(&self, layer_index: usize) -> usize {
        self.dilation.pow(layer_index as u32)
    }

    /// Learnable parameter count in closed form:
    ///
    /// ```text
    ///   read-in   Σ_K K·1·(C/|𝒦|) + 2C
    /// + L × (Σ_K K·C·(C/|𝒦|) + 2C + 1)      (the +1 is ε; absent when graph-free)
    /// + read-out T_h·T_f + T_f + C + T_f
    /// ```
    pub fn closed_form_parameter_count(&self) -> usize {
        let c = self.channels;
        let branch = self.branch_channels();
        let ksum: usize = self.kernels.iter().sum();
        let eps = usize::from(!self.graph_free);
        let readin = ksum * branch + 2 * c;
        let layer = ksum * c * branch + 2 * c + eps;
        let readout = self.history * self.horizon + self.horizon + c + self.horizon;
        readin + self.layers * layer + readout
    }

    /// Fields that must agree for parameters to move between two models.
    pub fn transfer_mismatches(&self, other: &ModelConfig) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, a: String, b: String| {
            if a != b {
                out.push(format!("{name}: {a} vs {b}"));
            }
        };
        check(
            "history",
            self.history.to_string(),
            other.history.to_string(),
        );
        check(
            "horizon",
            self.horizon.to_string(),
            other.horizon.to_string(),
        );
        check(
            "channels",
            self.channels.to_string(),
            other.channels.to_string(),
        );
        check("layers", self.layers.to_string(), other.layers.to_string());
        check(
            "kernels",
            format!("{:?}", self.kernels),
            format!("{:?}", other.kernels),
        );
        check(
            "graph_free",
            self.graph_free.to_string(),
            other.graph_free.to_string(),
        );
        out
    }
}
