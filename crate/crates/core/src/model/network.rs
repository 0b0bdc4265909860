//! Forward pass: read-in TCN + batch norm → L × (GraphAgg → TCN → batch norm
//! → residual → ReLU) → pooling → two-step read-out.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::config::{ModelConfig, Pooling};
use super::params::{conv_name, ParameterSet};
use crate::autodiff::{Adjacency, BatchStats, NormMode, Reduce, Tape, Tensor, Var, BN_MOMENTUM};
use crate::data::SampleBatch;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; moments are returned for the caller.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Parameters recorded on a tape, by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Records every parameter; as differentiable leaves when `trainable`,
    /// otherwise as constants.
    pub fn new(tape: &mut Tape, params: &ParameterSet, trainable: bool) -> Self {
        let vars = params
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Key(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

pub struct ForwardOutput {
    /// `[B, T_f]` in scaled units.
    pub prediction: Var,
    /// Training-mode batch-norm moments, keyed by site (`readin`, `layers.0`, ...).
    pub stats: Vec<(String, BatchStats)>,
}

fn check_finite(tape: &Tape, v: Var, location: &str) -> Result<()> {
    let t = tape.value(v);
    if let Some(bad) = t.data().iter().find(|x| !x.is_finite()) {
        return Err(Error::numeric(
            location,
            format!(
                "non-finite activation {bad} in tensor of shape {:?}",
                t.shape()
            ),
        ));
    }
    Ok(())
}

/// Parallel dilated causal convolutions, one per kernel size, concatenated on
/// the channel axis.
pub fn tcn_block(
    tape: &mut Tape,
    h: Var,
    bound: &Bound,
    prefix: &str,
    cfg: &ModelConfig,
    layer_index: usize,
) -> Result<Var> {
    let dilation = cfg.dilation_at(layer_index);
    let mut branches = Vec::with_capacity(cfg.kernels.len());
    for &k in &cfg.kernels {
        let f = bound.get(&conv_name(prefix, k))?;
        branches.push(tape.conv1d(h, f, dilation)?);
    }
    if branches.len() == 1 {
        return Ok(branches[0]);
    }
    tape.concat(&branches, 2)
}

/// `(1 + ε)·H_i + Σ_{u ∈ N(i)} H_u`.
pub fn graph_agg(tape: &mut Tape, h: Var, eps: Var, adjacency: Arc<Adjacency>) -> Result<Var> {
    tape.gin_aggregate(h, eps, adjacency)
}

fn norm(
    tape: &mut Tape,
    x: Var,
    bound: &Bound,
    buffers: &BTreeMap<String, Tensor>,
    site: &str,
    mode: Mode,
) -> Result<(Var, Option<BatchStats>)> {
    let gamma = bound.get(&format!("{site}.bn.gamma"))?;
    let beta = bound.get(&format!("{site}.bn.beta"))?;
    match mode {
        Mode::Train => tape.batch_norm(x, gamma, beta, NormMode::Train),
        Mode::Eval => {
            let mean = buffer(buffers, &format!("{site}.bn.running_mean"))?;
            let var = buffer(buffers, &format!("{site}.bn.running_var"))?;
            tape.batch_norm(
                x,
                gamma,
                beta,
                NormMode::Eval {
                    mean: mean.data(),
                    var: var.data(),
                },
            )
        }
    }
}

fn buffer<'a>(buffers: &'a BTreeMap<String, Tensor>, name: &str) -> Result<&'a Tensor> {
    buffers
        .get(name)
        .ok_or_else(|| Error::Key(format!("no buffer named {name}")))
}

/// `ReLU(BN(TCN(GraphAgg(H))) + H)`; graph-free skips the aggregation.
#[allow(clippy::too_many_arguments)]
pub fn spatiotemporal_block(
    tape: &mut Tape,
    h: Var,
    adjacency: &Arc<Adjacency>,
    bound: &Bound,
    buffers: &BTreeMap<String, Tensor>,
    cfg: &ModelConfig,
    layer: usize,
    mode: Mode,
) -> Result<(Var, Option<BatchStats>)> {
    let prefix = format!("layers.{layer}");
    let agg = if cfg.graph_free {
        h
    } else {
        let eps = bound.get(&format!("{prefix}.eps"))?;
        graph_agg(tape, h, eps, Arc::clone(adjacency))?
    };
    let t = tcn_block(tape, agg, bound, &prefix, cfg, layer + 1)?;
    let (n, stats) = norm(tape, t, bound, buffers, &prefix, mode)?;
    let r = tape.add(n, h)?;
    Ok((tape.relu(r)?, stats))
}

/// `[N, T_h, C] → [B, T_h, C]`.
pub fn pool(
    tape: &mut Tape,
    h: Var,
    centers: &[usize],
    offsets: &[usize],
    mode: Pooling,
) -> Result<Var> {
    match mode {
        Pooling::Target => tape.gather_rows(h, centers),
        Pooling::Sum => tape.segment_reduce(h, offsets, Reduce::Sum),
        Pooling::Max => tape.segment_reduce(h, offsets, Reduce::Max),
        Pooling::Mean => tape.segment_reduce(h, offsets, Reduce::Mean),
    }
}

/// Two-step read-out of `[B, T_h, C]`:
/// `ĥ[τ, c] = ReLU(Σ_l w[l, τ]·h[l, c] + a[τ])`, then `ŷ[τ] = Σ_c z[c]·ĥ[τ, c] + b[τ]`.
pub fn read_out(tape: &mut Tape, h: Var, bound: &Bound, cfg: &ModelConfig) -> Result<Var> {
    let b_size = tape.shape(h)[0];
    let w = bound.get("readout.w")?;
    let a = bound.get("readout.a")?;
    let z = bound.get("readout.z")?;
    let b = bound.get("readout.b")?;
    let ht = tape.swap_last_axes(h)?; // [B, C, T_h]
    let mixed = tape.linear(ht, w, Some(a))?; // [B, C, T_f]
    let act = tape.relu(mixed)?;
    let back = tape.swap_last_axes(act)?; // [B, T_f, C]
    let y = tape.linear(back, z, None)?; // [B, T_f, 1]
    let y = tape.reshape(y, vec![b_size, cfg.horizon])?;
    tape.add_broadcast(y, b)
}

/// Read-in and spatio-temporal blocks: per-node hidden states `[N, T_h, C]`
/// plus any training-mode batch-norm moments.
pub fn encode(
    tape: &mut Tape,
    bound: &Bound,
    buffers: &BTreeMap<String, Tensor>,
    cfg: &ModelConfig,
    batch: &SampleBatch,
    mode: Mode,
) -> Result<(Var, Vec<(String, BatchStats)>)> {
    let n = batch.n_nodes();
    if batch.histories.shape() != [n, cfg.history] {
        return Err(Error::dim(format!(
            "batch histories {:?} do not match history length {}",
            batch.histories.shape(),
            cfg.history
        )));
    }
    let mut stats = Vec::new();
    let x = tape.constant(batch.histories.clone().reshaped(vec![n, cfg.history, 1])?);
    let h = tcn_block(tape, x, bound, "readin", cfg, 0)?;
    let (mut h, s) = norm(tape, h, bound, buffers, "readin", mode)?;
    check_finite(tape, h, "readin")?;
    if let Some(s) = s {
        stats.push(("readin".to_string(), s));
    }
    for l in 0..cfg.layers {
        let (next, s) =
            spatiotemporal_block(tape, h, &batch.adjacency, bound, buffers, cfg, l, mode)?;
        check_finite(tape, next, &format!("layers.{l}"))?;
        if let Some(s) = s {
            stats.push((format!("layers.{l}"), s));
        }
        h = next;
    }
    Ok((h, stats))
}

/// Full network on one batch.
pub fn forward(
    tape: &mut Tape,
    bound: &Bound,
    buffers: &BTreeMap<String, Tensor>,
    cfg: &ModelConfig,
    batch: &SampleBatch,
    mode: Mode,
) -> Result<ForwardOutput> {
    let (h, stats) = encode(tape, bound, buffers, cfg, batch, mode)?;
    let pooled = pool(tape, h, &batch.centers, &batch.offsets, cfg.pooling)?;
    let prediction = read_out(tape, pooled, bound, cfg)?;
    check_finite(tape, prediction, "readout")?;
    Ok(ForwardOutput { prediction, stats })
}

/// Folds training-mode moments into the running statistics
/// (`running ← (1 − m)·running + m·batch`, unbiased variance).
pub fn update_running_stats(
    params: &mut ParameterSet,
    stats: &[(String, BatchStats)],
) -> Result<()> {
    for (site, s) in stats {
        let unbias = if s.count > 1 {
            s.count as f64 / (s.count - 1) as f64
        } else {
            1.0
        };
        let mean_name = format!("{site}.bn.running_mean");
        let var_name = format!("{site}.bn.running_var");
        let rm = params
            .buffers
            .get_mut(&mean_name)
            .ok_or_else(|| Error::Key(format!("no buffer named {mean_name}")))?;
        for (r, m) in rm.data_mut().iter_mut().zip(&s.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = params
            .buffers
            .get_mut(&var_name)
            .ok_or_else(|| Error::Key(format!("no buffer named {var_name}")))?;
        for (r, v) in rv.data_mut().iter_mut().zip(&s.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
        }
    }
    Ok(())
}

/// A configuration with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParameterSet::init(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count_parameters()
    }

    /// Eval-mode prediction `[B, T_f]` in the batch's (scaled) units.
    pub fn predict(&self, batch: &SampleBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params, false);
        let out = forward(
            &mut tape,
            &bound,
            &self.params.buffers,
            &self.config,
            batch,
            Mode::Eval,
        )?;
        Ok(tape.value(out.prediction).clone())
    }
}
