//! Prepared-dataset container.
//!
//! ```text
//! "FXDS" version:u8
//! metadata: u64 length + JSON (stations, graph parameters, scaler, split, series shape)
//! values:   n_stations × n_steps f64, row-major
//! crc32 of everything above: u32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scaler::Scaler;
use super::series::TrafficSeries;
use super::split::SplitManifest;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::graph::{
    CoordinateFrame, Station, StationMap, DEFAULT_HOPS, DEFAULT_KAPPA_KM, DEFAULT_MAX_DEGREE,
};

const MAGIC: &[u8; 4] = b"FXDS";
const VERSION: u8 = 1;

/// Parameters the proximity graph and subgraph store were built with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    pub kappa_km: f64,
    pub max_degree: usize,
    pub hops: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            kappa_km: DEFAULT_KAPPA_KM,
            max_degree: DEFAULT_MAX_DEGREE,
            hops: DEFAULT_HOPS,
        }
    }
}

/// Everything `prepare` produces apart from the subgraph store.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    /// Rows of `series` follow this map's order, which is also graph order.
    pub stations: StationMap,
    pub series: TrafficSeries,
    pub graph: GraphParams,
    pub scaler: Scaler,
    pub manifest: SplitManifest,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    frame: CoordinateFrame,
    station_ids: Vec<String>,
    positions: Vec<[f64; 2]>,
    n_steps: usize,
    start_unix: i64,
    resolution_minutes: u32,
    graph: GraphParams,
    scaler: Scaler,
    manifest: SplitManifest,
}

impl PreparedDataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.series.station_ids() != self.stations.ids().collect::<Vec<_>>().as_slice() {
            return Err(Error::Input("series rows must follow station order".into()));
        }
        let meta = Metadata {
            frame: self.stations.frame(),
            station_ids: self.series.station_ids().to_vec(),
            positions: self
                .stations
                .stations()
                .iter()
                .map(|s| s.position)
                .collect(),
            n_steps: self.series.n_steps(),
            start_unix: self.series.start_unix,
            resolution_minutes: self.series.resolution_minutes,
            graph: self.graph,
            scaler: self.scaler,
            manifest: self.manifest.clone(),
        };
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.blob(&serde_json::to_vec(&meta)?);
        for v in self.series.values() {
            w.f64(*v);
        }
        let mut bytes = w.into_inner();
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 1 + 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a prepared dataset".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!(
                "dataset version {} unsupported (expected {VERSION})",
                bytes[4]
            )));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(Error::Integrity("dataset checksum mismatch".into()));
        }
        let mut r = ByteReader::new(&body[5..]);
        let meta: Metadata = serde_json::from_slice(r.blob()?)?;
        let n = meta.station_ids.len() * meta.n_steps;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f64()?);
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes in dataset".into()));
        }
        if meta.positions.len() != meta.station_ids.len() {
            return Err(Error::Format("station positions and ids disagree".into()));
        }
        let stations = StationMap::new(
            meta.frame,
            meta.station_ids
                .iter()
                .zip(&meta.positions)
                .map(|(id, p)| Station {
                    id: id.clone(),
                    position: *p,
                })
                .collect(),
        )?;
        let mut series = TrafficSeries::new(meta.station_ids, meta.n_steps, values)?;
        series.start_unix = meta.start_unix;
        series.resolution_minutes = meta.resolution_minutes;
        Ok(PreparedDataset {
            stations,
            series,
            graph: meta.graph,
            scaler: meta.scaler,
            manifest: meta.manifest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        PreparedDataset::from_bytes(&std::fs::read(path)?)
    }
}
