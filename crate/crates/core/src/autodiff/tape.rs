use std::sync::Arc;

use super::kernels::{self, split_axis, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Batch-norm denominator stabiliser.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the newest batch in the running-statistics moving average.
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction applied per segment by [`Tape::segment_reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Compressed neighbour lists over the rows of a node-major tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Adjacency {
    /// Builds neighbour lists from undirected edges; each edge is inserted in both directions.
    pub fn from_undirected(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut degree = vec![0usize; n_nodes];
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::dim(format!(
                    "edge ({a}, {b}) outside {n_nodes} nodes"
                )));
            }
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n_nodes].to_vec();
        let mut neighbors = vec![0; offsets[n_nodes]];
        for &(a, b) in edges {
            neighbors[fill[a]] = b;
            fill[a] += 1;
            neighbors[fill[b]] = a;
            fill[b] += 1;
        }
        Ok(Adjacency { offsets, neighbors })
    }

    pub fn edgeless(n_nodes: usize) -> Self {
        Adjacency {
            offsets: vec![0; n_nodes + 1],
            neighbors: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }
}

/// Per-channel moments of one training-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the normalised rows.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Selects batch or running statistics for [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        f: Var,
        geometry: ConvGeometry,
    },
    Relu(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddBroadcast {
        x: Var,
        b: Var,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    SumOver {
        x: Var,
        axis: usize,
    },
    MeanOver {
        x: Var,
        axis: usize,
    },
    MaxOver {
        x: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    SwapLastAxes(Var),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Segment {
        x: Var,
        offsets: Vec<usize>,
        reduce: Reduce,
        argmax: Vec<usize>,
    },
    GinAggregate {
        h: Var,
        eps: Var,
        adjacency: Arc<Adjacency>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    MeanAll(Var),
    L2Norm(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], populated for every differentiable leaf
/// reachable from the loss.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Wengert list for one forward pass followed by at most one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input. No gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Records a differentiable leaf (a learnable parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::Contract(
                "tape already ran backward; record a new pass on a fresh tape".into(),
            ));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_axis(&self, x: Var, axis: usize) -> Result<()> {
        let nd = self.shape(x).len();
        if axis >= nd {
            return Err(Error::dim(format!(
                "axis {axis} out of range for rank {nd}"
            )));
        }
        Ok(())
    }

    /// `x·w + b` over the last axis of `x`; leading axes are batch axes.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || *xs.last().unwrap() != ws[0] {
            return Err(Error::dim(format!("linear: x {xs:?} vs w {ws:?}")));
        }
        let (n_in, n_out) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [n_out] {
                return Err(Error::dim(format!(
                    "linear: bias {:?} vs {n_out} outputs",
                    self.shape(b)
                )));
            }
        }
        let rows = self.value(x).len() / n_in.max(1);
        let mut out = vec![0.0; rows * n_out];
        kernels::gemm(
            self.value(x).data(),
            rows,
            n_in,
            self.value(w).data(),
            n_out,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(n_out) {
                for (o, bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = n_out;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, &inputs)
    }

    /// Dilated causal convolution of `x: [N, T, C_in]` with `f: [K, C_in, C_out]`.
    ///
    /// The input is implicitly left-padded with `(K − 1)·dilation` zeros, so the
    /// output keeps length `T` and step `t` only reads steps `≤ t`.
    pub fn conv1d(&mut self, x: Var, f: Var, dilation: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let fs = self.shape(f).to_vec();
        if xs.len() != 3 || fs.len() != 3 || xs[2] != fs[1] {
            return Err(Error::dim(format!("conv1d: x {xs:?} vs filter {fs:?}")));
        }
        if dilation == 0 || fs[0] == 0 {
            return Err(Error::dim("conv1d: kernel and dilation must be ≥ 1"));
        }
        let geometry = ConvGeometry {
            nodes: xs[0],
            steps: xs[1],
            c_in: xs[2],
            c_out: fs[2],
            kernel: fs[0],
            dilation,
        };
        if (geometry.kernel - 1) * dilation >= geometry.steps {
            log::warn!(
                "receptive field of kernel {} at dilation {} exceeds window of {} steps",
                geometry.kernel,
                dilation,
                geometry.steps
            );
        }
        let out = kernels::conv_forward(&geometry, self.value(x).data(), self.value(f).data());
        let value = Tensor::new(vec![xs[0], xs[1], fs[2]], out)?;
        self.push(value, Op::Conv { x, f, geometry }, &[x, f])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&a| if a > 0.0 || a.is_nan() { a } else { 0.0 })
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a.abs()).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(value, Op::Abs(x), &[x])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a * factor).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(value, Op::Scale(x, factor), &[x])
    }

    /// `x + b` where `b`'s shape equals the trailing axes of `x`.
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(Error::dim(format!("add_broadcast: {xs:?} vs {bs:?}")));
        }
        let bv = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        if !bv.is_empty() {
            for chunk in data.chunks_exact_mut(bv.len()) {
                for (o, v) in chunk.iter_mut().zip(bv) {
                    *o += v;
                }
            }
        }
        let value = Tensor::new(xs.to_vec(), data)?;
        self.push(value, Op::AddBroadcast { x, b }, &[x, b])
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        self.check_axis(first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(Error::dim(format!(
                    "concat along {axis}: {base:?} vs {s:?}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for &x in xs {
            let len = self.shape(x)[axis];
            let src = self.value(x).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                out[dst..dst + len * inner]
                    .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        )
    }

    /// Sum over one axis, which is removed from the shape.
    pub fn sum_over(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, out) = self.reduce_axis(x, axis, |vals| vals.iter().sum())?;
        self.push(Tensor::new(shape, out)?, Op::SumOver { x, axis }, &[x])
    }

    /// Sum over several axes (any order, no duplicates).
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() {
            return Err(Error::dim("sum: repeated axis"));
        }
        let mut cur = x;
        for &axis in sorted.iter().rev() {
            cur = self.sum_over(cur, axis)?;
        }
        Ok(cur)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.sum(x, &axes)
    }

    pub fn mean_over(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, out) =
            self.reduce_axis(x, axis, |vals| vals.iter().sum::<f64>() / vals.len() as f64)?;
        self.push(Tensor::new(shape, out)?, Op::MeanOver { x, axis }, &[x])
    }

    /// Max over one axis; the gradient flows to the first maximal entry.
    pub fn max_over(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let shape_in = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape_in, axis);
        if len == 0 {
            return Err(Error::dim("max over an empty axis"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_v = src[o * len * inner + i];
                for l in 1..len {
                    let v = src[(o * len + l) * inner + i];
                    if v > best_v {
                        best = l;
                        best_v = v;
                    }
                }
                out[o * inner + i] = best_v;
                argmax[o * inner + i] = best;
            }
        }
        let mut shape = shape_in;
        shape.remove(axis);
        self.push(
            Tensor::new(shape, out)?,
            Op::MaxOver { x, axis, argmax },
            &[x],
        )
    }

    fn reduce_axis(
        &self,
        x: Var,
        axis: usize,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        self.check_axis(x, axis)?;
        let shape_in = self.shape(x);
        let (outer, len, inner) = split_axis(shape_in, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        let mut lane = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for (l, slot) in lane.iter_mut().enumerate() {
                    *slot = src[(o * len + l) * inner + i];
                }
                out[o * inner + i] = f(&lane);
            }
        }
        let mut shape = shape_in.to_vec();
        shape.remove(axis);
        Ok((shape, out))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push(value, Op::Reshape(x), &[x])
    }

    /// `[..., a, b] → [..., b, a]`.
    pub fn swap_last_axes(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("swap_last_axes needs rank ≥ 2"));
        }
        let (a, b) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let out = transpose_blocks(self.value(x).data(), a, b);
        let mut new_shape = shape;
        let n = new_shape.len();
        new_shape.swap(n - 2, n - 1);
        self.push(Tensor::new(new_shape, out)?, Op::SwapLastAxes(x), &[x])
    }

    /// Selects rows (axis 0) by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(Error::dim("gather_rows on a scalar"));
        }
        let row_len: usize = shape[1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * row_len);
        for &r in rows {
            if r >= shape[0] {
                return Err(Error::dim(format!("row {r} out of {}", shape[0])));
            }
            out.extend_from_slice(&src[r * row_len..(r + 1) * row_len]);
        }
        let mut new_shape = shape;
        new_shape[0] = rows.len();
        self.push(
            Tensor::new(new_shape, out)?,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }

    /// Reduces contiguous row segments `offsets[s]..offsets[s+1]` along axis 0.
    pub fn segment_reduce(&mut self, x: Var, offsets: &[usize], reduce: Reduce) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || offsets.len() < 2 {
            return Err(Error::dim("segment_reduce needs rank ≥ 1 and ≥ 1 segment"));
        }
        if offsets[0] != 0
            || *offsets.last().unwrap() != shape[0]
            || offsets.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::dim(format!(
                "segment offsets {offsets:?} do not partition {} rows into non-empty runs",
                shape[0]
            )));
        }
        let row_len: usize = shape[1..].iter().product();
        let segments = offsets.len() - 1;
        let src = self.value(x).data();
        let mut out = vec![0.0; segments * row_len];
        let mut argmax = Vec::new();
        if reduce == Reduce::Max {
            argmax = vec![0; segments * row_len];
        }
        for s in 0..segments {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let dst = &mut out[s * row_len..(s + 1) * row_len];
            match reduce {
                Reduce::Sum | Reduce::Mean => {
                    for r in lo..hi {
                        for (d, v) in dst.iter_mut().zip(&src[r * row_len..(r + 1) * row_len]) {
                            *d += v;
                        }
                    }
                    if reduce == Reduce::Mean {
                        let n = (hi - lo) as f64;
                        dst.iter_mut().for_each(|d| *d /= n);
                    }
                }
                Reduce::Max => {
                    dst.copy_from_slice(&src[lo * row_len..(lo + 1) * row_len]);
                    let am = &mut argmax[s * row_len..(s + 1) * row_len];
                    am.iter_mut().for_each(|a| *a = lo);
                    for r in lo + 1..hi {
                        for j in 0..row_len {
                            let v = src[r * row_len + j];
                            if v > dst[j] {
                                dst[j] = v;
                                am[j] = r;
                            }
                        }
                    }
                }
            }
        }
        let mut new_shape = shape;
        new_shape[0] = segments;
        self.push(
            Tensor::new(new_shape, out)?,
            Op::Segment {
                x,
                offsets: offsets.to_vec(),
                reduce,
                argmax,
            },
            &[x],
        )
    }

    /// GIN aggregation: row `i` becomes `(1 + ε)·h_i + Σ_{u ∈ N(i)} h_u`.
    pub fn gin_aggregate(&mut self, h: Var, eps: Var, adjacency: Arc<Adjacency>) -> Result<Var> {
        let shape = self.shape(h).to_vec();
        if shape.is_empty() || shape[0] != adjacency.n_nodes() {
            return Err(Error::dim(format!(
                "gin_aggregate: features {shape:?} vs {} adjacency nodes",
                adjacency.n_nodes()
            )));
        }
        if self.value(eps).len() != 1 {
            return Err(Error::dim("gin_aggregate: epsilon must be a scalar"));
        }
        let self_weight = 1.0 + self.value(eps).item();
        let row_len: usize = shape[1..].iter().product();
        let src = self.value(h).data();
        let mut out: Vec<f64> = src.iter().map(|v| v * self_weight).collect();
        for i in 0..shape[0] {
            let dst = i * row_len;
            for &u in adjacency.neighbors(i) {
                let from = u * row_len;
                for j in 0..row_len {
                    out[dst + j] += src[from + j];
                }
            }
        }
        self.push(
            Tensor::new(shape, out)?,
            Op::GinAggregate { h, eps, adjacency },
            &[h, eps],
        )
    }

    /// Batch normalisation per channel (last axis) over all leading axes.
    ///
    /// Returns the batch moments in training mode so the caller can update its
    /// running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        let c = *shape
            .last()
            .ok_or_else(|| Error::dim("batch_norm on a scalar"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "batch_norm: {c} channels vs gamma {:?} / beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let src = self.value(x).data();
        let rows = src.len() / c.max(1);
        let (mean, var, stats) = match mode {
            NormMode::Train => {
                if rows == 0 {
                    return Err(Error::dim("batch_norm over zero rows"));
                }
                let mut mean = vec![0.0; c];
                for row in src.chunks_exact(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; c];
                for row in src.chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: rows,
                };
                (mean, var, Some(stats))
            }
            NormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("batch_norm: running statistics length"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for ((xr, nr), or) in src
            .chunks_exact(c)
            .zip(normalized.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            for j in 0..c {
                let z = (xr[j] - mean[j]) * inv_std[j];
                nr[j] = z;
                or[j] = g[j] * z + b[j];
            }
        }
        let var_out = self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                train: matches!(mode, NormMode::Train),
            },
            &[x, gamma, beta],
        )?;
        Ok((var_out, stats))
    }

    /// Global L2 norm `√(Σ θ²)` over every element of every input.
    pub fn l2_norm(&mut self, xs: &[Var]) -> Result<Var> {
        let ss: f64 = xs
            .iter()
            .map(|&x| self.value(x).data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        self.push(Tensor::scalar(ss.sqrt()), Op::L2Norm(xs.to_vec()), xs)
    }

    /// Reverse sweep from a scalar `loss`. The tape cannot be reused afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract("tape already ran backward".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss is not recorded on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = Vec::new();
        leaf_grads.resize_with(self.nodes.len(), || None);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let n_in = self.shape(*w)[0];
                let n_out = self.shape(*w)[1];
                let rows = g.len() / n_out.max(1);
                if self.wants(*x) {
                    let buf = grad_buf(grads, *x, rows * n_in);
                    kernels::gemm_a_bt(g, rows, n_out, self.value(*w).data(), n_in, 1.0, buf);
                }
                if self.wants(*w) {
                    let buf = grad_buf(grads, *w, n_in * n_out);
                    kernels::gemm_at_b(self.value(*x).data(), rows, n_in, g, n_out, buf);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let buf = grad_buf(grads, *b, n_out);
                        for row in g.chunks_exact(n_out) {
                            for (d, v) in buf.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::Conv { x, f, geometry } => {
                let (dx, df) = kernels::conv_backward(
                    geometry,
                    self.value(*x).data(),
                    self.value(*f).data(),
                    g,
                    self.wants(*x),
                );
                if let Some(dx) = dx {
                    add_into(grad_buf(grads, *x, dx.len()), &dx);
                }
                if self.wants(*f) {
                    add_into(grad_buf(grads, *f, df.len()), &df);
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let buf = grad_buf(grads, *x, g.len());
                    for ((d, gv), xv) in buf.iter_mut().zip(g).zip(xv) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Abs(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let buf = grad_buf(grads, *x, g.len());
                    for ((d, gv), xv) in buf.iter_mut().zip(g).zip(xv) {
                        if *xv > 0.0 {
                            *d += gv;
                        } else if *xv < 0.0 {
                            *d -= gv;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(grad_buf(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(grad_buf(grads, *a, g.len()), g);
                }
                if self.wants(*b) {
                    let buf = grad_buf(grads, *b, g.len());
                    for (d, v) in buf.iter_mut().zip(g) {
                        *d -= v;
                    }
                }
            }
            Op::Scale(x, factor) => {
                if self.wants(*x) {
                    let buf = grad_buf(grads, *x, g.len());
                    for (d, v) in buf.iter_mut().zip(g) {
                        *d += v * factor;
                    }
                }
            }
            Op::AddBroadcast { x, b } => {
                if self.wants(*x) {
                    add_into(grad_buf(grads, *x, g.len()), g);
                }
                if self.wants(*b) {
                    let n = self.value(*b).len();
                    let buf = grad_buf(grads, *b, n);
                    if n > 0 {
                        for chunk in g.chunks_exact(n) {
                            add_into(buf, chunk);
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.wants(x) {
                        let buf = grad_buf(grads, x, outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut buf[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                            );
                        }
                    }
                    offset += len;
                }
            }
            Op::SumOver { x, axis } | Op::MeanOver { x, axis } => {
                if self.wants(*x) {
                    let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                    let factor = match node.op {
                        Op::MeanOver { .. } => 1.0 / len as f64,
                        _ => 1.0,
                    };
                    let buf = grad_buf(grads, *x, outer * len * inner);
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                buf[(o * len + l) * inner + i] += g[o * inner + i] * factor;
                            }
                        }
                    }
                }
            }
            Op::MaxOver { x, axis, argmax } => {
                if self.wants(*x) {
                    let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                    let buf = grad_buf(grads, *x, outer * len * inner);
                    for o in 0..outer {
                        for i in 0..inner {
                            let l = argmax[o * inner + i];
                            buf[(o * len + l) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    add_into(grad_buf(grads, *x, g.len()), g);
                }
            }
            Op::SwapLastAxes(x) => {
                if self.wants(*x) {
                    let s = node.value.shape();
                    let (a, b) = (s[s.len() - 2], s[s.len() - 1]);
                    let back = transpose_blocks(g, a, b);
                    add_into(grad_buf(grads, *x, g.len()), &back);
                }
            }
            Op::GatherRows { x, rows } => {
                if self.wants(*x) {
                    let shape = self.shape(*x);
                    let row_len: usize = shape[1..].iter().product();
                    let buf = grad_buf(grads, *x, shape[0] * row_len);
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(
                            &mut buf[r * row_len..(r + 1) * row_len],
                            &g[k * row_len..(k + 1) * row_len],
                        );
                    }
                }
            }
            Op::Segment {
                x,
                offsets,
                reduce,
                argmax,
            } => {
                if self.wants(*x) {
                    let shape = self.shape(*x);
                    let row_len: usize = shape[1..].iter().product();
                    let buf = grad_buf(grads, *x, shape[0] * row_len);
                    for s in 0..offsets.len() - 1 {
                        let gs = &g[s * row_len..(s + 1) * row_len];
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        match reduce {
                            Reduce::Sum | Reduce::Mean => {
                                let factor = if *reduce == Reduce::Mean {
                                    1.0 / (hi - lo) as f64
                                } else {
                                    1.0
                                };
                                for r in lo..hi {
                                    for (d, v) in
                                        buf[r * row_len..(r + 1) * row_len].iter_mut().zip(gs)
                                    {
                                        *d += v * factor;
                                    }
                                }
                            }
                            Reduce::Max => {
                                for j in 0..row_len {
                                    let r = argmax[s * row_len + j];
                                    buf[r * row_len + j] += gs[j];
                                }
                            }
                        }
                    }
                }
            }
            Op::GinAggregate { h, eps, adjacency } => {
                let hv = self.value(*h).data();
                let n = adjacency.n_nodes();
                let row_len = hv.len() / n.max(1);
                if self.wants(*h) {
                    let self_weight = 1.0 + self.value(*eps).item();
                    let buf = grad_buf(grads, *h, hv.len());
                    for (d, v) in buf.iter_mut().zip(g) {
                        *d += v * self_weight;
                    }
                    // Row i received h_u for every u in N(i); route g_i back to each u.
                    for i in 0..n {
                        let src = i * row_len;
                        for &u in adjacency.neighbors(i) {
                            let dst = u * row_len;
                            for j in 0..row_len {
                                buf[dst + j] += g[src + j];
                            }
                        }
                    }
                }
                if self.wants(*eps) {
                    let d: f64 = g.iter().zip(hv).map(|(a, b)| a * b).sum();
                    grad_buf(grads, *eps, 1)[0] += d;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let rows = g.len() / c;
                let mut sum_g = vec![0.0; c];
                let mut sum_gz = vec![0.0; c];
                for (gr, zr) in g.chunks_exact(c).zip(normalized.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += gr[j];
                        sum_gz[j] += gr[j] * zr[j];
                    }
                }
                if self.wants(*gamma) {
                    add_into(grad_buf(grads, *gamma, c), &sum_gz);
                }
                if self.wants(*beta) {
                    add_into(grad_buf(grads, *beta, c), &sum_g);
                }
                if self.wants(*x) {
                    let gm = self.value(*gamma).data();
                    let buf = grad_buf(grads, *x, g.len());
                    let m = rows as f64;
                    for ((d, gr), zr) in buf
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(normalized.chunks_exact(c))
                    {
                        for j in 0..c {
                            let scale = gm[j] * inv_std[j];
                            d[j] += if *train {
                                scale * (gr[j] - sum_g[j] / m - zr[j] * sum_gz[j] / m)
                            } else {
                                scale * gr[j]
                            };
                        }
                    }
                }
            }
            Op::MeanAll(x) => {
                if self.wants(*x) {
                    let n = self.value(*x).len();
                    let v = g[0] / n as f64;
                    grad_buf(grads, *x, n).iter_mut().for_each(|d| *d += v);
                }
            }
            Op::L2Norm(xs) => {
                let norm = node.value.item();
                if norm == 0.0 {
                    // Subgradient 0 at the origin.
                    return;
                }
                let factor = g[0] / norm;
                for &x in xs {
                    if self.wants(x) {
                        let xv = self.value(x).data();
                        let buf = grad_buf(grads, x, xv.len());
                        for (d, v) in buf.iter_mut().zip(xv) {
                            *d += v * factor;
                        }
                    }
                }
            }
        }
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Transposes every trailing `a×b` block of `data`.
fn transpose_blocks(data: &[f64], a: usize, b: usize) -> Vec<f64> {
    let block = a * b;
    let mut out = vec![0.0; data.len()];
    if block == 0 {
        return out;
    }
    for (src, dst) in data.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
        for i in 0..a {
            for j in 0..b {
                dst[j * a + i] = src[i * b + j];
            }
        }
    }
    out
}
