//! Station proximity graph, k-hop subgraph extraction and the subgraph store.

mod proximity;
mod stations;
mod store;
mod subgraph;

pub use proximity::{
    build_proximity_graph, ConnectivityReport, ProximityGraph, DEFAULT_KAPPA_KM, DEFAULT_MAX_DEGREE,
};
pub use stations::{CoordinateFrame, Station, StationMap, EARTH_RADIUS_KM};
pub use store::{build_store, SubgraphStore};
pub use subgraph::{edge_dropout, khop_subgraph, LocalEdge, SubgraphRecord, DEFAULT_HOPS};

pub(crate) use subgraph::edge_dropout_with;
