use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by the haversine distance.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// How station and tile coordinates are expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateFrame {
    /// `(lat, lon)` in degrees; distances are great-circle (haversine).
    LatLon,
    /// Projected `(x, y)` in metres; distances are Euclidean.
    Planar,
}

impl CoordinateFrame {
    /// Distance in kilometres between two positions of this frame.
    pub fn distance_km(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            CoordinateFrame::Planar => {
                let dx = a[0] - b[0];
                let dy = a[1] - b[1];
                (dx * dx + dy * dy).sqrt() / 1000.0
            }
            CoordinateFrame::LatLon => haversine_km(a, b),
        }
    }

    pub(crate) fn csv_columns(self) -> (&'static str, &'static str) {
        match self {
            CoordinateFrame::LatLon => ("lat", "lon"),
            CoordinateFrame::Planar => ("x_m", "y_m"),
        }
    }

    pub(crate) fn from_columns(a: &str, b: &str) -> Result<Self> {
        match (a.trim(), b.trim()) {
            ("lat", "lon") => Ok(CoordinateFrame::LatLon),
            ("x_m", "y_m") => Ok(CoordinateFrame::Planar),
            other => Err(Error::Input(format!(
                "unknown coordinate columns {other:?}; expected lat,lon or x_m,y_m"
            ))),
        }
    }
}

fn haversine_km(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (lat1, lon1) = (a[0].to_radians(), a[1].to_radians());
    let (lat2, lon2) = (b[0].to_radians(), b[1].to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub position: [f64; 2],
}

/// Base-station locations with unique ids, kept in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct StationMap {
    frame: CoordinateFrame,
    stations: Vec<Station>,
    index: HashMap<String, usize>,
}

impl StationMap {
    pub fn new(frame: CoordinateFrame, stations: Vec<Station>) -> Result<Self> {
        let mut index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if !s.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Input(format!(
                    "station {} has a non-finite position",
                    s.id
                )));
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate station id {}", s.id)));
            }
        }
        Ok(StationMap {
            frame,
            stations,
            index,
        })
    }

    pub fn frame(&self) -> CoordinateFrame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.stations.iter().map(|s| s.id.as_str())
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.stations[i].position
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn distance_km(&self, i: usize, j: usize) -> f64 {
        self.frame
            .distance_km(self.stations[i].position, self.stations[j].position)
    }

    /// Reads `station_id,lat,lon` or `station_id,x_m,y_m`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 3 || headers[0].trim() != "station_id" {
            return Err(Error::Input(format!(
                "station header must be station_id,lat,lon or station_id,x_m,y_m, got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let frame = CoordinateFrame::from_columns(&headers[1], &headers[2])?;
        let mut stations = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |k: usize| -> Result<f64> {
                record[k].trim().parse().map_err(|_| {
                    Error::Input(format!(
                        "station row {}: bad number {:?}",
                        line + 2,
                        &record[k]
                    ))
                })
            };
            stations.push(Station {
                id: record[0].trim().to_string(),
                position: [parse(1)?, parse(2)?],
            });
        }
        StationMap::new(frame, stations)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        StationMap::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let (a, b) = self.frame.csv_columns();
        w.write_record(["station_id", a, b])?;
        for s in &self.stations {
            w.write_record([
                s.id.clone(),
                s.position[0].to_string(),
                s.position[1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
