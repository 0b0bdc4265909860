use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Minutes between consecutive samples in the reference datasets.
pub const DEFAULT_RESOLUTION_MINUTES: u32 = 15;

/// Dense `stations × timesteps` traffic matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficSeries {
    station_ids: Vec<String>,
    n_steps: usize,
    values: Vec<f64>,
    /// Unix seconds of step 0.
    pub start_unix: i64,
    pub resolution_minutes: u32,
}

impl TrafficSeries {
    pub fn new(station_ids: Vec<String>, n_steps: usize, values: Vec<f64>) -> Result<Self> {
        if station_ids.len() * n_steps != values.len() {
            return Err(Error::Input(format!(
                "{} stations × {n_steps} steps needs {} values, got {}",
                station_ids.len(),
                station_ids.len() * n_steps,
                values.len()
            )));
        }
        Ok(TrafficSeries {
            station_ids,
            n_steps,
            values,
            start_unix: 0,
            resolution_minutes: DEFAULT_RESOLUTION_MINUTES,
        })
    }

    pub fn zeros(station_ids: Vec<String>, n_steps: usize) -> Self {
        let n = station_ids.len() * n_steps;
        TrafficSeries::new(station_ids, n_steps, vec![0.0; n]).expect("sized")
    }

    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, station: usize) -> &[f64] {
        &self.values[station * self.n_steps..(station + 1) * self.n_steps]
    }

    pub fn row_mut(&mut self, station: usize) -> &mut [f64] {
        let n = self.n_steps;
        &mut self.values[station * n..(station + 1) * n]
    }

    pub fn value(&self, station: usize, t: usize) -> f64 {
        self.values[station * self.n_steps + t]
    }

    /// `(X[t − history .. t], X[t .. t + horizon])` for one station.
    pub fn window(
        &self,
        station: usize,
        t: usize,
        history: usize,
        horizon: usize,
    ) -> Result<(&[f64], &[f64])> {
        if station >= self.n_stations() {
            return Err(Error::Index(format!(
                "station {station} of {}",
                self.n_stations()
            )));
        }
        if t < history || t + horizon > self.n_steps {
            return Err(Error::Index(format!(
                "window at t={t} with history {history} and horizon {horizon} \
                 exceeds {} steps",
                self.n_steps
            )));
        }
        let row = self.row(station);
        Ok((&row[t - history..t], &row[t..t + horizon]))
    }

    /// Number of `(station, t)` pairs with a complete window.
    pub fn window_count(&self, history: usize, horizon: usize) -> usize {
        let per_station = (self.n_steps + 1).saturating_sub(history + horizon);
        self.n_stations() * per_station
    }

    /// Reorders rows to follow `ids`; every id must be present.
    pub fn aligned_to(&self, ids: &[String]) -> Result<TrafficSeries> {
        let pos: HashMap<&str, usize> = self
            .station_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut values = Vec::with_capacity(ids.len() * self.n_steps);
        for id in ids {
            let &i = pos
                .get(id.as_str())
                .ok_or_else(|| Error::Key(format!("no traffic for station {id}")))?;
            values.extend_from_slice(self.row(i));
        }
        let mut out = TrafficSeries::new(ids.to_vec(), self.n_steps, values)?;
        out.start_unix = self.start_unix;
        out.resolution_minutes = self.resolution_minutes;
        Ok(out)
    }

    /// Reads a wide (`id,t0,t1,…`) or long (`id,timestep,traffic`) matrix.
    /// `id_column` names the expected first header field.
    pub fn read_csv<R: Read>(reader: R, id_column: &str) -> Result<Self> {
        let (ids, n_steps, values) = read_matrix(reader, id_column)?;
        TrafficSeries::new(ids, n_steps, values)
    }

    /// Writes the wide layout.
    pub fn write_csv<W: Write>(&self, writer: W, id_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![id_column.to_string()];
        header.extend((0..self.n_steps).map(|t| format!("t{t}")));
        w.write_record(&header)?;
        for (i, id) in self.station_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn read_matrix<R: Read>(
    reader: R,
    id_column: &str,
) -> Result<(Vec<String>, usize, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers[0].trim() != id_column {
        return Err(Error::Input(format!(
            "traffic header must start with {id_column}, got {:?}",
            headers.get(0)
        )));
    }
    let parse = |s: &str, what: &str| -> Result<f64> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("bad {what} value {s:?}")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Input(format!(
                "traffic must be finite and ≥ 0, got {v}"
            )));
        }
        Ok(v)
    };
    let long = headers.len() == 3 && &headers[1] == "timestep" && &headers[2] == "traffic";
    if long {
        let mut rows: Vec<(String, usize, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let t: usize = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("bad timestep {:?}", &rec[1])))?;
            rows.push((rec[0].trim().to_string(), t, parse(&rec[2], "traffic")?));
        }
        let mut ids: Vec<String> = Vec::new();
        let mut pos: HashMap<String, usize> = HashMap::new();
        let mut n_steps = 0;
        for (id, t, _) in &rows {
            if !pos.contains_key(id) {
                pos.insert(id.clone(), ids.len());
                ids.push(id.clone());
            }
            n_steps = n_steps.max(t + 1);
        }
        let mut values = vec![f64::NAN; ids.len() * n_steps];
        for (id, t, v) in rows {
            let slot = &mut values[pos[&id] * n_steps + t];
            if !slot.is_nan() {
                return Err(Error::Input(format!(
                    "duplicate entry for {id} at step {t}"
                )));
            }
            *slot = v;
        }
        if let Some(k) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::Input(format!(
                "missing traffic for {} at step {} (timesteps must be uniform)",
                ids[k / n_steps],
                k % n_steps
            )));
        }
        return Ok((ids, n_steps, values));
    }

    let n_steps = headers.len() - 1;
    let mut ids = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Input(format!(
                "row for {} has {} fields, header has {}",
                &rec[0],
                rec.len(),
                headers.len()
            )));
        }
        let id = rec[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Input(format!("duplicate row id {id}")));
        }
        for field in rec.iter().skip(1) {
            values.push(parse(field, "traffic")?);
        }
        ids.push(id);
    }
    Ok((ids, n_steps, values))
}
