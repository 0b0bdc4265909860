//! Per-station cellular traffic forecasting from k-hop neighbourhoods.
//!
//! The crate covers the whole pipeline: Voronoi re-aggregation of tile
//! traffic, proximity-graph construction, a persistent store of k-hop
//! subgraphs, a GIN-style spatiotemporal network built on a small
//! reverse-mode autodiff engine, training with early stopping and transfer,
//! and per-horizon evaluation.

pub mod autodiff;
mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod training;

pub use error::{Error, Result};
