use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::proximity::ProximityGraph;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

/// Hop count used when none is configured; matches the number of spatiotemporal layers.
pub const DEFAULT_HOPS: usize = 2;

/// Undirected edge between local node indices, `a < b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalEdge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

/// Induced k-hop neighbourhood of one station. Local index 0 is the center.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphRecord {
    pub center_id: String,
    pub hops: u32,
    pub node_ids: Vec<String>,
    /// Position of each local node in the proximity graph (and the series rows).
    pub node_index: Vec<usize>,
    pub edges: Vec<LocalEdge>,
}

impl SubgraphRecord {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn center_index(&self) -> usize {
        self.node_index[0]
    }

    pub(crate) fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.str(&self.center_id)?;
        w.u32(self.hops);
        w.u32(self.node_ids.len() as u32);
        for (id, &g) in self.node_ids.iter().zip(&self.node_index) {
            w.u64(g as u64);
            w.str(id)?;
        }
        w.u32(self.edges.len() as u32);
        for e in &self.edges {
            w.u32(e.a);
            w.u32(e.b);
            w.f64(e.weight);
        }
        Ok(w.into_inner())
    }

    pub(crate) fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let center_id = r.str()?;
        let hops = r.u32()?;
        let n = r.u32()? as usize;
        let mut node_ids = Vec::with_capacity(n);
        let mut node_index = Vec::with_capacity(n);
        for _ in 0..n {
            node_index.push(r.u64()? as usize);
            node_ids.push(r.str()?);
        }
        let m = r.u32()? as usize;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            edges.push(LocalEdge {
                a: r.u32()?,
                b: r.u32()?,
                weight: r.f64()?,
            });
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after subgraph record".into()));
        }
        Ok(SubgraphRecord {
            center_id,
            hops,
            node_ids,
            node_index,
            edges,
        })
    }
}

/// Breadth-first closure of `center` to depth `hops` with its induced edges.
///
/// Nodes are in breadth-first discovery order (center first, each node's
/// neighbours taken by graph index), so hop distance never decreases.
pub fn khop_subgraph(graph: &ProximityGraph, center: &str, hops: usize) -> Result<SubgraphRecord> {
    let c = graph
        .index_of(center)
        .ok_or_else(|| Error::Key(format!("station {center} not in graph")))?;
    let mut local: HashMap<usize, u32> = HashMap::new();
    let mut order = vec![c];
    local.insert(c, 0);
    let mut frontier = VecDeque::from([(c, 0usize)]);
    while let Some((u, depth)) = frontier.pop_front() {
        if depth == hops {
            continue;
        }
        for &(v, _) in graph.neighbors(u) {
            if let std::collections::hash_map::Entry::Vacant(e) = local.entry(v) {
                e.insert(order.len() as u32);
                order.push(v);
                frontier.push_back((v, depth + 1));
            }
        }
    }
    let mut edges = Vec::new();
    for (a_local, &a) in order.iter().enumerate() {
        for &(b, weight) in graph.neighbors(a) {
            if let Some(&b_local) = local.get(&b) {
                if (a_local as u32) < b_local {
                    edges.push(LocalEdge {
                        a: a_local as u32,
                        b: b_local,
                        weight,
                    });
                }
            }
        }
    }
    edges.sort_by_key(|e| (e.a, e.b));
    Ok(SubgraphRecord {
        center_id: center.to_string(),
        hops: hops as u32,
        node_ids: order.iter().map(|&i| graph.id(i).to_string()).collect(),
        node_index: order,
        edges,
    })
}

/// Removes each undirected edge independently with probability `p`.
///
/// Nodes and surviving weights are untouched; the same seed always drops the
/// same edges.
pub fn edge_dropout(sub: &SubgraphRecord, p: f64, seed: u64) -> SubgraphRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edge_dropout_with(sub, p, &mut rng)
}

pub(crate) fn edge_dropout_with<R: Rng>(
    sub: &SubgraphRecord,
    p: f64,
    rng: &mut R,
) -> SubgraphRecord {
    let mut out = sub.clone();
    if p <= 0.0 {
        return out;
    }
    out.edges.retain(|_| rng.random::<f64>() >= p);
    out
}
