use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Learnable tensors plus non-learnable buffers (batch-norm running moments),
/// both keyed by dotted names such as `layers.0.conv.k3`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

pub(crate) fn conv_name(prefix: &str, k: usize) -> String {
    format!("{prefix}.conv.k{k}")
}

/// Names of the batch-norm sites, in forward order.
pub(crate) fn norm_sites(cfg: &ModelConfig) -> Vec<String> {
    std::iter::once("readin".to_string())
        .chain((0..cfg.layers).map(|l| format!("layers.{l}")))
        .collect()
}

impl ParameterSet {
    /// Seeded initialisation: filters and affine weights uniform in
    /// `±1/√fan_in`, ε = 0, γ = 1, β = 0, running mean 0 and variance 1.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParameterSet::default();
        let c = cfg.channels;
        let branch = cfg.branch_channels();
        let mut uniform = |shape: Vec<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::new(shape, data).expect("sized")
        };

        for &k in &cfg.kernels {
            set.params
                .insert(conv_name("readin", k), uniform(vec![k, 1, branch], k));
        }
        for l in 0..cfg.layers {
            let prefix = format!("layers.{l}");
            if !cfg.graph_free {
                set.params
                    .insert(format!("{prefix}.eps"), Tensor::scalar(0.0));
            }
            for &k in &cfg.kernels {
                set.params
                    .insert(conv_name(&prefix, k), uniform(vec![k, c, branch], k * c));
            }
        }
        let (th, tf) = (cfg.history, cfg.horizon);
        set.params
            .insert("readout.w".into(), uniform(vec![th, tf], th));
        set.params.insert("readout.a".into(), uniform(vec![tf], th));
        set.params
            .insert("readout.z".into(), uniform(vec![c, 1], c));
        set.params.insert("readout.b".into(), uniform(vec![tf], c));

        for site in norm_sites(cfg) {
            set.params
                .insert(format!("{site}.bn.gamma"), Tensor::full(vec![c], 1.0));
            set.params
                .insert(format!("{site}.bn.beta"), Tensor::zeros(vec![c]));
            set.buffers
                .insert(format!("{site}.bn.running_mean"), Tensor::zeros(vec![c]));
            set.buffers
                .insert(format!("{site}.bn.running_var"), Tensor::full(vec![c], 1.0));
        }
        Ok(set)
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Key(format!("no parameter named {name}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Key(format!("no buffer named {name}")))
    }

    /// Total number of learnable scalars (buffers excluded).
    pub fn count_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Per-name counts, for itemised reports.
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect()
    }

    /// Exact equality of names, shapes and bit patterns.
    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        fn same(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|((ka, va), (kb, vb))| ka == kb && va.bitwise_eq(vb))
        }
        same(&self.params, &other.params) && same(&self.buffers, &other.buffers)
    }

    /// Every parameter is a tensor of the shape `fresh` would have.
    pub fn check_shapes(&self, fresh: &ParameterSet) -> Result<()> {
        let mut problems = Vec::new();
        for (name, t) in &fresh.params {
            match self.params.get(name) {
                None => problems.push(format!("missing {name}")),
                Some(v) if v.shape() != t.shape() => problems.push(format!(
                    "{name}: {:?} vs expected {:?}",
                    v.shape(),
                    t.shape()
                )),
                _ => {}
            }
        }
        for name in self.params.keys() {
            if !fresh.params.contains_key(name) {
                problems.push(format!("unexpected {name}"));
            }
        }
        for (name, t) in &fresh.buffers {
            if self.buffers.get(name).map(Tensor::shape) != Some(t.shape()) {
                problems.push(format!("buffer {name}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "parameters do not fit the configuration: {}",
                problems.join("; ")
            )))
        }
    }
}
