use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::stations::StationMap;
use crate::error::{Error, Result};

/// Threshold at which both reference city graphs stay connected.
pub const DEFAULT_KAPPA_KM: f64 = 3.5;
pub const DEFAULT_MAX_DEGREE: usize = 10;

/// Summary printed after graph construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub nodes: usize,
    pub edges: usize,
    pub components: usize,
    /// Largest number of neighbours any node chose to keep (bounded by the cap).
    pub max_kept_degree: usize,
    /// Largest degree after symmetrisation; may exceed the cap.
    pub max_degree: usize,
}

impl ConnectivityReport {
    pub fn is_connected(&self) -> bool {
        self.components <= 1
    }
}

impl fmt::Display for ConnectivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} nodes, {} edges, {} connected component(s), max degree {} (kept {})",
            self.nodes, self.edges, self.components, self.max_degree, self.max_kept_degree
        )
    }
}

/// Sparse symmetric proximity graph over stations.
///
/// Edge weights are `exp(−d)` with `d` in kilometres, and only pairs closer
/// than `kappa_km` are linked.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    /// Neighbour lists sorted by node index.
    adjacency: Vec<Vec<(usize, f64)>>,
    kappa_km: f64,
    max_degree: usize,
    report: ConnectivityReport,
}

/// Links every pair of stations closer than `kappa_km`, then lets each node keep
/// its `max_degree` nearest candidates. An edge survives when either endpoint
/// kept it.
pub fn build_proximity_graph(
    stations: &StationMap,
    kappa_km: f64,
    max_degree: usize,
) -> Result<ProximityGraph> {
    if stations.is_empty() {
        return Err(Error::Input(
            "proximity graph needs at least one station".into(),
        ));
    }
    if !(kappa_km > 0.0 && kappa_km.is_finite()) {
        return Err(Error::Config(format!(
            "kappa must be positive, got {kappa_km}"
        )));
    }
    if max_degree == 0 {
        return Err(Error::Config("max degree must be at least 1".into()));
    }
    let n = stations.len();
    let mut candidates: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = stations.distance_km(i, j);
            if d < kappa_km {
                candidates[i].push((d, j));
                candidates[j].push((d, i));
            }
        }
    }
    let mut weights: HashMap<(usize, usize), f64> = HashMap::new();
    let mut max_kept = 0;
    for (i, cand) in candidates.iter_mut().enumerate() {
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.truncate(max_degree);
        max_kept = max_kept.max(cand.len());
        for &(d, j) in cand.iter() {
            weights.insert((i.min(j), i.max(j)), (-d).exp());
        }
    }
    let mut edges: Vec<(usize, usize, f64)> =
        weights.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    edges.sort_by_key(|x| (x.0, x.1));
    let ids = stations.ids().map(str::to_string).collect();
    let mut graph = ProximityGraph::from_edges(ids, &edges)?;
    graph.kappa_km = kappa_km;
    graph.max_degree = max_degree;
    graph.report.max_kept_degree = max_kept;
    Ok(graph)
}

impl ProximityGraph {
    /// Builds a graph from explicit undirected weighted edges over `ids`.
    pub fn from_edges(ids: Vec<String>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = ids.len();
        let mut index = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate station id {id}")));
            }
        }
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::Input(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            if a == b {
                return Err(Error::Input(format!("self-loop on node {a}")));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Input(format!("edge weight {w} outside (0, 1]")));
            }
            if adjacency[a].iter().any(|&(u, _)| u == b) {
                continue;
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(u, _)| u);
        }
        let n_edges = adjacency.iter().map(Vec::len).sum::<usize>() / 2;
        let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
        let report = ConnectivityReport {
            nodes: n,
            edges: n_edges,
            components: count_components(&adjacency),
            max_kept_degree: max_degree,
            max_degree,
        };
        Ok(ProximityGraph {
            ids,
            index,
            adjacency,
            kappa_km: f64::INFINITY,
            max_degree: usize::MAX,
            report,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Neighbours of node `i` with edge weights, ordered by node index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(u, _)| u)
            .ok()
            .map(|k| self.adjacency[a][k].1)
    }

    /// Undirected edges as `(a, b, w)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.report.edges);
        for (a, list) in self.adjacency.iter().enumerate() {
            for &(b, w) in list {
                if a < b {
                    out.push((a, b, w));
                }
            }
        }
        out
    }

    pub fn kappa_km(&self) -> f64 {
        self.kappa_km
    }

    pub fn max_degree_cap(&self) -> usize {
        self.max_degree
    }

    pub fn report(&self) -> &ConnectivityReport {
        &self.report
    }
}

fn count_components(adjacency: &[Vec<(usize, f64)>]) -> usize {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for &(v, _) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    components
}
