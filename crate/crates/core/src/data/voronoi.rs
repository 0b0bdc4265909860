//! Re-aggregation of tile-level traffic onto base stations.
//!
//! Every tile goes to its nearest station; a station's series is the sum of
//! its tiles' series. Equidistant tiles go to the station listed first.

use std::io::Read;
use std::path::Path;

use super::series::TrafficSeries;
use crate::error::{Error, Result};
use crate::graph::{CoordinateFrame, Station, StationMap};

/// Tile centroids plus their traffic matrix (`tiles × timesteps`).
#[derive(Clone, Debug, PartialEq)]
pub struct TileTraffic {
    pub frame: CoordinateFrame,
    pub tile_ids: Vec<String>,
    pub positions: Vec<[f64; 2]>,
    pub traffic: TrafficSeries,
}

impl TileTraffic {
    pub fn new(
        frame: CoordinateFrame,
        tile_ids: Vec<String>,
        positions: Vec<[f64; 2]>,
        traffic: TrafficSeries,
    ) -> Result<Self> {
        if tile_ids.len() != positions.len() || traffic.station_ids() != tile_ids.as_slice() {
            return Err(Error::Input(
                "tile ids, positions and traffic rows must align".into(),
            ));
        }
        if traffic.values().iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Input("tile traffic must be finite and ≥ 0".into()));
        }
        Ok(TileTraffic {
            frame,
            tile_ids,
            positions,
            traffic,
        })
    }

    /// Reads `tile_id,lat,lon` (or `tile_id,x_m,y_m`) positions and a wide or
    /// long traffic matrix keyed by `tile_id`.
    pub fn read_csv<P: Read, T: Read>(positions: P, traffic: T) -> Result<Self> {
        let points = read_points(positions, "tile_id")?;
        let series = TrafficSeries::read_csv(traffic, "tile_id")?;
        let ids: Vec<String> = points.stations().iter().map(|s| s.id.clone()).collect();
        let series = series.aligned_to(&ids)?;
        let positions = points.stations().iter().map(|s| s.position).collect();
        TileTraffic::new(points.frame(), ids, positions, series)
    }

    pub fn read_csv_paths(positions: &Path, traffic: &Path) -> Result<Self> {
        TileTraffic::read_csv(
            std::fs::File::open(positions)?,
            std::fs::File::open(traffic)?,
        )
    }
}

/// Parses an id/coordinate CSV whose first column is `id_column`.
pub(crate) fn read_points<R: Read>(reader: R, id_column: &str) -> Result<StationMap> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let mut fields = first.trim_end_matches('\r').splitn(2, ',');
    if fields.next().map(str::trim) != Some(id_column) {
        return Err(Error::Input(format!(
            "expected {id_column} as first column"
        )));
    }
    let renamed = format!("station_id,{}\n{rest}", fields.next().unwrap_or(""));
    StationMap::read_csv(renamed.as_bytes())
}

/// Embeds positions so that Euclidean order equals the frame's distance order.
/// Lat/lon maps to the unit sphere, where chord length is monotone in arc length.
fn embed(frame: CoordinateFrame, p: [f64; 2]) -> [f64; 3] {
    match frame {
        CoordinateFrame::Planar => [p[0], p[1], 0.0],
        CoordinateFrame::LatLon => {
            let (lat, lon) = (p[0].to_radians(), p[1].to_radians());
            [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
        }
    }
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Nearest-station index for every point, via a sweep over stations sorted on
/// the first embedded coordinate.
pub fn assign_nearest(
    frame: CoordinateFrame,
    points: &[[f64; 2]],
    stations: &[Station],
) -> Vec<usize> {
    let mut order: Vec<(usize, [f64; 3])> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (i, embed(frame, s.position)))
        .collect();
    order.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]).then(a.0.cmp(&b.0)));

    points
        .iter()
        .map(|p| {
            let q = embed(frame, *p);
            let start = order.partition_point(|(_, e)| e[0] < q[0]);
            let mut best = (f64::INFINITY, usize::MAX);
            let mut consider = |k: usize| -> bool {
                let (idx, e) = &order[k];
                let dx = e[0] - q[0];
                if dx * dx > best.0 {
                    return false;
                }
                let d = sq_dist(e, &q);
                if d < best.0 || (d == best.0 && *idx < best.1) {
                    best = (d, *idx);
                }
                true
            };
            for k in start..order.len() {
                if !consider(k) {
                    break;
                }
            }
            for k in (0..start).rev() {
                if !consider(k) {
                    break;
                }
            }
            best.1
        })
        .collect()
}

/// Sums tile traffic into per-station series. Per-step totals are conserved.
pub fn voronoi_aggregate(tiles: &TileTraffic, stations: &StationMap) -> Result<TrafficSeries> {
    if stations.is_empty() {
        return Err(Error::Input(
            "Voronoi aggregation needs at least one station".into(),
        ));
    }
    if tiles.frame != stations.frame() {
        return Err(Error::Input(format!(
            "coordinate frame mismatch: tiles are {:?}, stations are {:?}",
            tiles.frame,
            stations.frame()
        )));
    }
    let n_steps = tiles.traffic.n_steps();
    let ids: Vec<String> = stations.ids().map(str::to_string).collect();
    let mut out = TrafficSeries::zeros(ids, n_steps);
    out.start_unix = tiles.traffic.start_unix;
    out.resolution_minutes = tiles.traffic.resolution_minutes;
    let owner = assign_nearest(tiles.frame, &tiles.positions, stations.stations());
    for (tile, &station) in owner.iter().enumerate() {
        let src = tiles.traffic.row(tile);
        for (d, v) in out.row_mut(station).iter_mut().zip(src) {
            *d += v;
        }
    }
    Ok(out)
}
