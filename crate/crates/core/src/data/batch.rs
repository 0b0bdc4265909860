//! Block-diagonal batching of k-hop subgraphs with their history windows.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::series::TrafficSeries;
use super::split::Sample;
use crate::autodiff::{Adjacency, Tensor};
use crate::error::{Error, Result};
use crate::graph::{edge_dropout_with, SubgraphRecord, SubgraphStore};

/// Anything that can hand out the stored subgraph of a station row.
pub trait SubgraphSource {
    fn subgraph(&self, station: usize) -> Result<SubgraphRecord>;
}

/// Reads straight from the on-disk store; `ids[row]` names each station.
pub struct StoreSource<'a> {
    pub store: &'a SubgraphStore,
    pub ids: &'a [String],
}

impl SubgraphSource for StoreSource<'_> {
    fn subgraph(&self, station: usize) -> Result<SubgraphRecord> {
        let id = self
            .ids
            .get(station)
            .ok_or_else(|| Error::Key(format!("station row {station} has no id")))?;
        self.store.get(id)
    }
}

/// Every record of a store held in memory, indexed by station row.
#[derive(Clone, Debug)]
pub struct SubgraphCache {
    records: Vec<SubgraphRecord>,
}

impl SubgraphCache {
    /// Loads the record of every id; record node indices must agree with the
    /// row order of `ids`.
    pub fn load(store: &SubgraphStore, ids: &[String]) -> Result<Self> {
        let mut records = Vec::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            let rec = store.get(id)?;
            if rec.center_index() != row {
                return Err(Error::Integrity(format!(
                    "subgraph of {id} refers to row {}, series has it at row {row}",
                    rec.center_index()
                )));
            }
            records.push(rec);
        }
        Ok(SubgraphCache { records })
    }

    pub fn from_records(records: Vec<SubgraphRecord>) -> Self {
        SubgraphCache { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, station: usize) -> Option<&SubgraphRecord> {
        self.records.get(station)
    }
}

impl SubgraphSource for SubgraphCache {
    fn subgraph(&self, station: usize) -> Result<SubgraphRecord> {
        self.records
            .get(station)
            .cloned()
            .ok_or_else(|| Error::Key(format!("no subgraph cached for station row {station}")))
    }
}

/// Edge-dropout settings for one training batch. The RNG stream is derived
/// from `(seed, batch_index)`, so batches can be assembled in any order.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub p: f64,
    pub seed: u64,
    pub batch_index: u64,
}

/// Assembly knobs.
#[derive(Clone, Copy, Debug)]
pub struct BatchOptions {
    pub history: usize,
    pub horizon: usize,
    /// `Some` only when training.
    pub dropout: Option<Dropout>,
    /// Keep just the center of every subgraph (graph-free variant).
    pub centers_only: bool,
}

/// Several subgraphs stacked into one disconnected graph.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub samples: Vec<Sample>,
    pub adjacency: Arc<Adjacency>,
    /// `[N_total, T_h]` node histories.
    pub histories: Tensor,
    /// `[B, T_f]` center targets.
    pub targets: Tensor,
    /// Row of each sample's center inside `histories`.
    pub centers: Vec<usize>,
    /// Sample `b` owns rows `offsets[b] .. offsets[b+1]`.
    pub offsets: Vec<usize>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Builds a batch from explicit graphs, each given as its node count and
    /// local undirected edges with the center at local index 0. `histories`
    /// holds the stacked node rows; samples are labelled `(b, 0)`.
    pub fn from_graphs(
        graphs: &[(usize, Vec<(usize, usize)>)],
        histories: Tensor,
        targets: Tensor,
    ) -> Result<Self> {
        let mut offsets = vec![0usize];
        let mut edges = Vec::new();
        for (n, local) in graphs {
            let base = *offsets.last().unwrap();
            if *n == 0 {
                return Err(Error::Input(
                    "a sample graph needs at least its center".into(),
                ));
            }
            for &(a, b) in local {
                if a >= *n || b >= *n {
                    return Err(Error::Input(format!("edge ({a}, {b}) outside {n} nodes")));
                }
                edges.push((base + a, base + b));
            }
            offsets.push(base + n);
        }
        let total = *offsets.last().unwrap();
        if histories.shape().first() != Some(&total)
            || targets.shape().first() != Some(&graphs.len())
        {
            return Err(Error::dim(format!(
                "{} graphs with {total} nodes vs histories {:?} and targets {:?}",
                graphs.len(),
                histories.shape(),
                targets.shape()
            )));
        }
        Ok(SampleBatch {
            samples: (0..graphs.len())
                .map(|b| Sample { station: b, t: 0 })
                .collect(),
            adjacency: Arc::new(Adjacency::from_undirected(total, &edges)?),
            histories,
            targets,
            centers: offsets[..graphs.len()].to_vec(),
            offsets,
        })
    }
}

/// Fetches each sample's subgraph, applies dropout when asked, and gathers
/// every node's history at its sample's origin from `series`.
pub fn assemble_batch(
    samples: &[Sample],
    source: &dyn SubgraphSource,
    series: &TrafficSeries,
    opts: &BatchOptions,
) -> Result<SampleBatch> {
    let (th, tf) = (opts.history, opts.horizon);
    let mut rng = opts.dropout.map(|d| {
        let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
        rng.set_stream(d.batch_index);
        (d.p, rng)
    });
    let mut offsets = vec![0usize];
    let mut centers = Vec::with_capacity(samples.len());
    let mut edges = Vec::new();
    let mut histories = Vec::new();
    let mut targets = Vec::with_capacity(samples.len() * tf);
    for s in samples {
        let (_, y) = series.window(s.station, s.t, th, tf)?;
        targets.extend_from_slice(y);
        let base = *offsets.last().unwrap();
        centers.push(base);
        if opts.centers_only {
            histories.extend_from_slice(series.window(s.station, s.t, th, tf)?.0);
            offsets.push(base + 1);
            continue;
        }
        let mut sub = source.subgraph(s.station)?;
        if sub.center_index() != s.station {
            return Err(Error::Integrity(format!(
                "subgraph for station row {} is centred on row {}",
                s.station,
                sub.center_index()
            )));
        }
        if let Some((p, rng)) = rng.as_mut() {
            sub = edge_dropout_with(&sub, *p, rng);
        }
        for &node in &sub.node_index {
            let row = series.row(node);
            histories.extend_from_slice(&row[s.t - th..s.t]);
        }
        edges.extend(
            sub.edges
                .iter()
                .map(|e| (base + e.a as usize, base + e.b as usize)),
        );
        offsets.push(base + sub.len());
    }
    let n = *offsets.last().unwrap();
    Ok(SampleBatch {
        samples: samples.to_vec(),
        adjacency: Arc::new(Adjacency::from_undirected(n, &edges)?),
        histories: Tensor::new(vec![n, th], histories)?,
        targets: Tensor::new(vec![samples.len(), tf], targets)?,
        centers,
        offsets,
    })
}
