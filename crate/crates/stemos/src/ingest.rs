//! File ingestion and emission: station/observation/ensemble CSV panels,
//! flat gridded-forecast files with bilinear interpolation to stations, and
//! the surface-roughness derivation from flux-tower records.
//!
//! All value columns print with Rust's shortest-round-trip float formatting,
//! so write-then-read reproduces panels exactly.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{
    ForecastPanel, ObsStatus, ObservationPanel, Station, StationNetwork,
};
use crate::error::{Error, Result};
use crate::simulate::ScenarioData;

fn line_err(path: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::data(format!("{}:{line}: {msg}", path.display()))
}

fn parse_time(path: &Path, line: u64, s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| line_err(path, line, format!("bad timestamp {s:?}: {e}")))
}

fn parse_f64(path: &Path, line: u64, field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| line_err(path, line, format!("bad {field} value {s:?}")))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

// ---------------------------------------------------------------------------
// Stations
// ---------------------------------------------------------------------------

/// Columns: id, latitude, longitude, elevation, roughness_length (blank if
/// underived).
pub fn load_stations(path: &Path) -> Result<Vec<Station>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(line_err(path, line, format!("expected 5 columns, got {}", rec.len())));
        }
        let roughness = rec[4].trim();
        out.push(Station {
            id: rec[0].trim().to_string(),
            latitude: parse_f64(path, line, "latitude", &rec[1])?,
            longitude: parse_f64(path, line, "longitude", &rec[2])?,
            elevation: parse_f64(path, line, "elevation", &rec[3])?,
            roughness_length: if roughness.is_empty() {
                None
            } else {
                Some(parse_f64(path, line, "roughness_length", roughness)?)
            },
        });
    }
    if out.is_empty() {
        return Err(Error::data(format!("{}: no stations", path.display())));
    }
    Ok(out)
}

pub fn write_stations(network: &StationNetwork, path: &Path) -> Result<()> {
    let mut w = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(w, "id,latitude,longitude,elevation,roughness_length")
        .map_err(|e| Error::io(path, e))?;
    for s in network.stations() {
        let z0 = s.roughness_length.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{z0}",
            s.id, s.latitude, s.longitude, s.elevation
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Observations and ensemble panels
// ---------------------------------------------------------------------------

fn hourly_axis(path: &Path, mut stamps: Vec<DateTime<Utc>>) -> Result<Vec<DateTime<Utc>>> {
    stamps.sort_unstable();
    stamps.dedup();
    let first = *stamps
        .first()
        .ok_or_else(|| Error::data(format!("{}: no timestamps", path.display())))?;
    let last = *stamps.last().unwrap();
    for s in &stamps {
        if (*s - first).num_seconds() % 3600 != 0 {
            return Err(Error::data(format!(
                "{}: timestamp {s} is off the hourly grid anchored at {first}",
                path.display()
            )));
        }
    }
    let hours = (last - first).num_hours();
    Ok((0..=hours).map(|h| first + Duration::hours(h)).collect())
}

fn status_from_flag(path: &Path, line: u64, flag: &str) -> Result<ObsStatus> {
    match flag {
        "observed" => Ok(ObsStatus::Observed),
        "censored_at_c" => Ok(ObsStatus::CensoredAtC),
        "missing" => Ok(ObsStatus::Missing),
        other => Err(line_err(path, line, format!("unknown flag {other:?}"))),
    }
}

/// One observation row with its resolved status and storable value.
#[derive(Debug, Clone)]
pub struct ObservationRow {
    pub time: DateTime<Utc>,
    pub station_id: String,
    /// Exactly the censor threshold for censored and missing cells.
    pub value: f64,
    pub status: ObsStatus,
}

/// Parse an observation CSV (timestamp, station_id, wind_ms, flag) without
/// resolving stations. A blank flag is inferred: values at or below the
/// censor threshold are censored, others observed.
pub fn load_observation_rows(path: &Path, censor_threshold: f64) -> Result<Vec<ObservationRow>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(line_err(path, line, format!("expected 4 columns, got {}", rec.len())));
        }
        let time = parse_time(path, line, &rec[0])?;
        let flag = rec[3].trim();
        let status = if flag.is_empty() {
            None
        } else {
            Some(status_from_flag(path, line, flag)?)
        };
        let value = if rec[2].trim().is_empty() {
            if status != Some(ObsStatus::Missing) {
                return Err(line_err(path, line, "blank wind value on a non-missing row"));
            }
            censor_threshold
        } else {
            parse_f64(path, line, "wind_ms", &rec[2])?
        };
        let status = status.unwrap_or(if value <= censor_threshold {
            ObsStatus::CensoredAtC
        } else {
            ObsStatus::Observed
        });
        let stored = match status {
            ObsStatus::CensoredAtC | ObsStatus::Missing => censor_threshold,
            ObsStatus::Observed => value,
        };
        out.push(ObservationRow {
            time,
            station_id: rec[1].trim().to_string(),
            value: stored,
            status,
        });
    }
    Ok(out)
}

/// Loaded dataset plus the stations removed by the availability filter.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub observations: ObservationPanel,
    pub forecasts: ForecastPanel,
    pub network: StationNetwork,
    /// (station id, availability) for every dropped station.
    pub dropped: Vec<(String, f64)>,
}

/// Load the three data files into aligned panels.
///
/// Observation columns: timestamp, station_id, wind_ms, flag. The flag
/// column may be blank, in which case a value at or below the censor
/// threshold is read as censored and an absent (timestamp, station) row as
/// missing. Stations observed (or censored) in fewer than
/// `availability_min` of the hours are dropped.
pub fn load_panels(
    stations_path: &Path,
    observations_path: &Path,
    ensemble_path: &Path,
    censor_threshold: f64,
    availability_min: f64,
) -> Result<LoadedData> {
    let stations = load_stations(stations_path)?;
    let id_index: BTreeMap<&str, usize> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    if id_index.len() != stations.len() {
        return Err(Error::data(format!(
            "{}: duplicate station ids",
            stations_path.display()
        )));
    }

    // Pass 1: observations into (time, site) -> (value, status).
    let rows = load_observation_rows(observations_path, censor_threshold)?;
    let times = hourly_axis(
        observations_path,
        rows.iter().map(|r| r.time).collect(),
    )?;
    let t_index: BTreeMap<DateTime<Utc>, usize> =
        times.iter().enumerate().map(|(i, t)| (*t, i)).collect();

    let n_all = stations.len();
    let mut values = DMatrix::from_element(times.len(), n_all, censor_threshold);
    let mut mask = vec![ObsStatus::Missing; times.len() * n_all];
    for row in rows {
        let Some(&site) = id_index.get(row.station_id.as_str()) else {
            return Err(Error::data(format!(
                "{}: unknown station {:?}",
                observations_path.display(),
                row.station_id
            )));
        };
        let t = t_index[&row.time];
        values[(t, site)] = row.value;
        mask[t * n_all + site] = row.status;
    }

    // Availability filter before panel construction.
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (i, station) in stations.iter().enumerate() {
        let present = (0..times.len())
            .filter(|&t| mask[t * n_all + i] != ObsStatus::Missing)
            .count();
        let avail = present as f64 / times.len() as f64;
        if avail >= availability_min {
            keep.push(i);
        } else {
            dropped.push((station.id.clone(), avail));
        }
    }
    if keep.is_empty() {
        return Err(Error::data("all stations fail the availability threshold"));
    }
    let kept_stations: Vec<Station> = keep.iter().map(|&i| stations[i].clone()).collect();
    let kept_values = DMatrix::from_fn(times.len(), keep.len(), |t, j| values[(t, keep[j])]);
    let kept_mask: Vec<ObsStatus> = (0..times.len())
        .flat_map(|t| keep.iter().map(move |&i| (t, i)))
        .map(|(t, i)| mask[t * n_all + i])
        .collect();

    // Pass 2: ensemble members, required complete on kept stations.
    let kept_index: BTreeMap<&str, usize> = kept_stations
        .iter()
        .enumerate()
        .map(|(j, s)| (s.id.as_str(), j))
        .collect();
    let mut member_cells: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut n_members = 0usize;
    {
        let mut rdr = reader(ensemble_path)?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::data(format!("{}: {e}", ensemble_path.display())))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 4 {
                return Err(line_err(
                    ensemble_path,
                    line,
                    format!("expected 4 columns, got {}", rec.len()),
                ));
            }
            let time = parse_time(ensemble_path, line, &rec[0])?;
            let Some(&site) = kept_index.get(rec[1].trim()) else {
                if id_index.contains_key(rec[1].trim()) {
                    continue; // dropped station
                }
                return Err(line_err(
                    ensemble_path,
                    line,
                    format!("unknown station {:?}", &rec[1]),
                ));
            };
            let member: usize = rec[2]
                .trim()
                .parse()
                .map_err(|_| line_err(ensemble_path, line, "bad member index"))?;
            let value = parse_f64(ensemble_path, line, "forecast_ms", &rec[3])?;
            let Some(&t) = t_index.get(&time) else {
                continue; // forecast hour outside the observation span
            };
            n_members = n_members.max(member + 1);
            if member_cells.insert((t, site, member), value).is_some() {
                return Err(line_err(ensemble_path, line, "duplicate member cell"));
            }
        }
    }
    if n_members == 0 {
        return Err(Error::data(format!(
            "{}: no ensemble rows inside the observation span",
            ensemble_path.display()
        )));
    }
    let n = kept_stations.len();
    let mut members = vec![0.0; times.len() * n * n_members];
    for t in 0..times.len() {
        for i in 0..n {
            for j in 0..n_members {
                let Some(&v) = member_cells.get(&(t, i, j)) else {
                    return Err(Error::data(format!(
                        "{}: missing member {j} for station {} at {}",
                        ensemble_path.display(),
                        kept_stations[i].id,
                        times[t]
                    )));
                };
                members[(t * n + i) * n_members + j] = v;
            }
        }
    }

    let network = StationNetwork::build(kept_stations)?;
    let observations = ObservationPanel::new(times.clone(), kept_values, kept_mask, censor_threshold)?;
    let forecasts = ForecastPanel::from_members(times, n, n_members, members)?;
    Ok(LoadedData {
        observations,
        forecasts,
        network,
        dropped,
    })
}

/// Load an ensemble CSV on its own hourly axis for a fixed station list
/// (identifier order defines the panel columns). Coverage must be complete.
pub fn load_ensemble(path: &Path, station_ids: &[String]) -> Result<ForecastPanel> {
    let id_index: BTreeMap<&str, usize> = station_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut cells: BTreeMap<(DateTime<Utc>, usize, usize), f64> = BTreeMap::new();
    let mut stamps = Vec::new();
    let mut n_members = 0usize;
    let mut rdr = reader(path)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(line_err(path, line, format!("expected 4 columns, got {}", rec.len())));
        }
        let time = parse_time(path, line, &rec[0])?;
        let Some(&site) = id_index.get(rec[1].trim()) else {
            continue;
        };
        let member: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| line_err(path, line, "bad member index"))?;
        let value = parse_f64(path, line, "forecast_ms", &rec[3])?;
        n_members = n_members.max(member + 1);
        stamps.push(time);
        if cells.insert((time, site, member), value).is_some() {
            return Err(line_err(path, line, "duplicate member cell"));
        }
    }
    let times = hourly_axis(path, stamps)?;
    let n = station_ids.len();
    let mut members = vec![0.0; times.len() * n * n_members];
    for (t, time) in times.iter().enumerate() {
        for i in 0..n {
            for j in 0..n_members {
                let Some(&v) = cells.get(&(*time, i, j)) else {
                    return Err(Error::data(format!(
                        "{}: missing member {j} for station {} at {time}",
                        path.display(),
                        station_ids[i]
                    )));
                };
                members[(t * n + i) * n_members + j] = v;
            }
        }
    }
    ForecastPanel::from_members(times, n, n_members, members)
}

pub fn write_observations(
    panel: &ObservationPanel,
    station_ids: &[String],
    path: &Path,
) -> Result<()> {
    if station_ids.len() != panel.n_sites() {
        return Err(Error::data("station id list does not match panel width"));
    }
    let mut w = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(w, "timestamp,station_id,wind_ms,flag").map_err(|e| Error::io(path, e))?;
    for (t, time) in panel.times.iter().enumerate() {
        for (i, id) in station_ids.iter().enumerate() {
            let status = panel.status(t, i);
            let (value, flag) = match status {
                ObsStatus::Observed => (panel.values[(t, i)].to_string(), "observed"),
                ObsStatus::CensoredAtC => (panel.values[(t, i)].to_string(), "censored_at_c"),
                ObsStatus::Missing => (String::new(), "missing"),
            };
            writeln!(w, "{},{id},{value},{flag}", time.to_rfc3339())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

pub fn write_ensemble(panel: &ForecastPanel, station_ids: &[String], path: &Path) -> Result<()> {
    if station_ids.len() != panel.n_sites() {
        return Err(Error::data("station id list does not match panel width"));
    }
    let mut w = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(w, "timestamp,station_id,member_index,forecast_ms").map_err(|e| Error::io(path, e))?;
    for (t, time) in panel.times.iter().enumerate() {
        for (i, id) in station_ids.iter().enumerate() {
            for j in 0..panel.n_members() {
                writeln!(
                    w,
                    "{},{id},{j},{}",
                    time.to_rfc3339(),
                    panel.member(t, i, j)
                )
                .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(())
}

/// One row of a station-forecast CSV as written by the forecast command.
#[derive(Debug, Clone)]
pub struct ForecastRow {
    pub origin: DateTime<Utc>,
    pub station_id: String,
    /// Hours ahead of the origin, 1-based.
    pub horizon: usize,
    pub median: f64,
    pub lo90: f64,
    pub hi90: f64,
}

/// Columns: origin, station_id, horizon, median, lo90, hi90.
pub fn load_forecast_rows(path: &Path) -> Result<Vec<ForecastRow>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 6 {
            return Err(line_err(path, line, format!("expected 6 columns, got {}", rec.len())));
        }
        out.push(ForecastRow {
            origin: parse_time(path, line, &rec[0])?,
            station_id: rec[1].trim().to_string(),
            horizon: rec[2]
                .trim()
                .parse()
                .map_err(|_| line_err(path, line, "bad horizon"))?,
            median: parse_f64(path, line, "median", &rec[3])?,
            lo90: parse_f64(path, line, "lo90", &rec[4])?,
            hi90: parse_f64(path, line, "hi90", &rec[5])?,
        });
    }
    if out.is_empty() {
        return Err(Error::data(format!("{}: no forecast rows", path.display())));
    }
    Ok(out)
}

/// One predictive-member row: origin, station_id, horizon, member_index,
/// value.
#[derive(Debug, Clone)]
pub struct MemberRow {
    pub origin: DateTime<Utc>,
    pub station_id: String,
    pub horizon: usize,
    pub member_index: usize,
    pub value: f64,
}

pub fn load_member_rows(path: &Path) -> Result<Vec<MemberRow>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(line_err(path, line, format!("expected 5 columns, got {}", rec.len())));
        }
        out.push(MemberRow {
            origin: parse_time(path, line, &rec[0])?,
            station_id: rec[1].trim().to_string(),
            horizon: rec[2]
                .trim()
                .parse()
                .map_err(|_| line_err(path, line, "bad horizon"))?,
            member_index: rec[3]
                .trim()
                .parse()
                .map_err(|_| line_err(path, line, "bad member index"))?,
            value: parse_f64(path, line, "value", &rec[4])?,
        });
    }
    Ok(out)
}

/// Target points for field prediction. Columns: latitude, longitude,
/// elevation, roughness_length, fbar, ensemble_var.
pub fn load_grid_points(path: &Path) -> Result<Vec<crate::calibrators::GridPoint>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 6 {
            return Err(line_err(path, line, format!("expected 6 columns, got {}", rec.len())));
        }
        out.push(crate::calibrators::GridPoint {
            latitude: parse_f64(path, line, "latitude", &rec[0])?,
            longitude: parse_f64(path, line, "longitude", &rec[1])?,
            elevation: parse_f64(path, line, "elevation", &rec[2])?,
            roughness_length: parse_f64(path, line, "roughness_length", &rec[3])?,
            fbar: parse_f64(path, line, "fbar", &rec[4])?,
            ensemble_var: parse_f64(path, line, "ensemble_var", &rec[5])?,
        });
    }
    if out.is_empty() {
        return Err(Error::data(format!("{}: no grid points", path.display())));
    }
    Ok(out)
}

/// Write a simulated dataset as a loadable directory: stations.csv,
/// observations.csv, ensemble.csv, and the generating truth as truth.json.
pub fn write_scenario_dataset(data: &ScenarioData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ids: Vec<String> = data
        .network
        .stations()
        .iter()
        .map(|s| s.id.clone())
        .collect();
    write_stations(&data.network, &dir.join("stations.csv"))?;
    write_observations(&data.observations, &ids, &dir.join("observations.csv"))?;
    write_ensemble(&data.forecasts, &ids, &dir.join("ensemble.csv"))?;
    let truth_path = dir.join("truth.json");
    let file = std::fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
    serde_json::to_writer_pretty(file, &data.truth)
        .map_err(|e| Error::data(format!("{}: {e}", truth_path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Gridded forecasts
// ---------------------------------------------------------------------------

/// Regular lat/lon forecast grid, one value per (time, lat, lon, member).
#[derive(Debug, Clone)]
pub struct GriddedForecast {
    pub times: Vec<DateTime<Utc>>,
    pub lat_axis: Vec<f64>,
    pub lon_axis: Vec<f64>,
    pub n_members: usize,
    values: Vec<f64>,
}

fn check_regular(axis: &[f64], name: &str) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::data(format!("{name} axis needs >= 2 nodes")));
    }
    let step = axis[1] - axis[0];
    if step <= 0.0 {
        return Err(Error::data(format!("{name} axis not increasing")));
    }
    for w in axis.windows(2) {
        if ((w[1] - w[0]) - step).abs() > 1e-9 {
            return Err(Error::data(format!(
                "{name} axis spacing irregular: {} vs {}",
                w[1] - w[0],
                step
            )));
        }
    }
    Ok(())
}

impl GriddedForecast {
    pub fn new(
        times: Vec<DateTime<Utc>>,
        lat_axis: Vec<f64>,
        lon_axis: Vec<f64>,
        n_members: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_regular(&lat_axis, "latitude")?;
        check_regular(&lon_axis, "longitude")?;
        let expect = times.len() * lat_axis.len() * lon_axis.len() * n_members;
        if values.len() != expect {
            return Err(Error::data(format!(
                "grid: expected {expect} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::data("grid: negative or non-finite value"));
        }
        Ok(GriddedForecast {
            times,
            lat_axis,
            lon_axis,
            n_members,
            values,
        })
    }

    pub fn value(&self, t: usize, i_lat: usize, j_lon: usize, member: usize) -> f64 {
        let idx = ((t * self.lat_axis.len() + i_lat) * self.lon_axis.len() + j_lon)
            * self.n_members
            + member;
        self.values[idx]
    }
}

/// Flat grid file: time, lat, lon, member, value. Axes are inferred from
/// the distinct coordinates and must form a complete regular grid.
pub fn load_grid(path: &Path) -> Result<GriddedForecast> {
    let mut rdr = reader(path)?;
    let mut cells: BTreeMap<(i64, u64, u64, usize), f64> = BTreeMap::new();
    let mut times = Vec::new();
    let mut lats = Vec::new();
    let mut lons = Vec::new();
    let mut n_members = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(line_err(path, line, format!("expected 5 columns, got {}", rec.len())));
        }
        let time = parse_time(path, line, &rec[0])?;
        let lat = parse_f64(path, line, "lat", &rec[1])?;
        let lon = parse_f64(path, line, "lon", &rec[2])?;
        let member: usize = rec[3]
            .trim()
            .parse()
            .map_err(|_| line_err(path, line, "bad member index"))?;
        let value = parse_f64(path, line, "value", &rec[4])?;
        times.push(time);
        lats.push(lat);
        lons.push(lon);
        n_members = n_members.max(member + 1);
        cells.insert(
            (time.timestamp(), lat.to_bits(), lon.to_bits(), member),
            value,
        );
    }
    times.sort_unstable();
    times.dedup();
    let sort_dedup = |mut v: Vec<f64>| {
        v.sort_unstable_by(f64::total_cmp);
        v.dedup();
        v
    };
    let lat_axis = sort_dedup(lats);
    let lon_axis = sort_dedup(lons);
    let mut values = Vec::with_capacity(times.len() * lat_axis.len() * lon_axis.len() * n_members);
    for t in &times {
        for la in &lat_axis {
            for lo in &lon_axis {
                for m in 0..n_members {
                    let Some(&v) = cells.get(&(t.timestamp(), la.to_bits(), lo.to_bits(), m)) else {
                        return Err(Error::data(format!(
                            "{}: grid incomplete at ({t}, {la}, {lo}, member {m})",
                            path.display()
                        )));
                    };
                    values.push(v);
                }
            }
        }
    }
    GriddedForecast::new(times, lat_axis, lon_axis, n_members, values)
}

fn bracket(axis: &[f64], x: f64, name: &str) -> Result<(usize, f64)> {
    let first = axis[0];
    let last = *axis.last().unwrap();
    if x < first || x > last {
        return Err(Error::data(format!(
            "{name} {x} outside grid hull [{first}, {last}]"
        )));
    }
    let step = axis[1] - axis[0];
    let pos = ((x - first) / step).floor() as usize;
    let i = pos.min(axis.len() - 2);
    let w = (x - axis[i]) / step;
    Ok((i, w.clamp(0.0, 1.0)))
}

/// Interpolate every member of every hour to the station coordinates with
/// standard bilinear weights from the four surrounding nodes.
pub fn bilinear_to_stations(
    grid: &GriddedForecast,
    network: &StationNetwork,
) -> Result<ForecastPanel> {
    let n = network.len();
    let m = grid.n_members;
    let t_len = grid.times.len();
    let mut members = vec![0.0; t_len * n * m];
    for (i, station) in network.stations().iter().enumerate() {
        let (ia, wa) = bracket(&grid.lat_axis, station.latitude, "latitude")?;
        let (jb, wb) = bracket(&grid.lon_axis, station.longitude, "longitude")?;
        for t in 0..t_len {
            for k in 0..m {
                let v00 = grid.value(t, ia, jb, k);
                let v01 = grid.value(t, ia, jb + 1, k);
                let v10 = grid.value(t, ia + 1, jb, k);
                let v11 = grid.value(t, ia + 1, jb + 1, k);
                let v = (1.0 - wa) * ((1.0 - wb) * v00 + wb * v01)
                    + wa * ((1.0 - wb) * v10 + wb * v11);
                members[(t * n + i) * m + k] = v;
            }
        }
    }
    ForecastPanel::from_members(grid.times.clone(), n, m, members)
}

// ---------------------------------------------------------------------------
// Roughness length from flux records
// ---------------------------------------------------------------------------

/// One hour of flux-tower measurements at a site, wind at 10 m.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluxRecord {
    pub timestamp: DateTime<Utc>,
    pub station_id: String,
    pub temperature_k: f64,
    pub pressure_pa: f64,
    /// Friction velocity, m/s.
    pub ustar: f64,
    /// Obukhov length, m.
    pub obukhov_l: f64,
    pub wind_ms: f64,
}

/// Columns: timestamp, station_id, temp_k, pressure_pa, ustar, obukhov_l,
/// wind_ms.
pub fn load_flux(path: &Path) -> Result<Vec<FluxRecord>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 7 {
            return Err(line_err(path, line, format!("expected 7 columns, got {}", rec.len())));
        }
        let r = FluxRecord {
            timestamp: parse_time(path, line, &rec[0])?,
            station_id: rec[1].trim().to_string(),
            temperature_k: parse_f64(path, line, "temp_k", &rec[2])?,
            pressure_pa: parse_f64(path, line, "pressure_pa", &rec[3])?,
            ustar: parse_f64(path, line, "ustar", &rec[4])?,
            obukhov_l: parse_f64(path, line, "obukhov_l", &rec[5])?,
            wind_ms: parse_f64(path, line, "wind_ms", &rec[6])?,
        };
        if r.ustar <= 0.0 {
            return Err(line_err(path, line, "friction velocity must be positive"));
        }
        if r.obukhov_l == 0.0 {
            return Err(line_err(path, line, "Obukhov length must be nonzero"));
        }
        if r.pressure_pa <= 0.0 || r.temperature_k <= 0.0 {
            return Err(line_err(path, line, "non-physical pressure or temperature"));
        }
        out.push(r);
    }
    Ok(out)
}

pub const VON_KARMAN: f64 = 0.40;
/// Measurement height of the wind record, meters.
pub const WIND_HEIGHT_M: f64 = 10.0;
/// Neutral stability requires |Obukhov length| above this, meters.
pub const NEUTRAL_OBUKHOV_M: f64 = 500.0;

#[derive(Debug, Clone, Serialize)]
pub struct MonthHourMedian {
    pub month: u32,
    pub hour: u32,
    pub z0: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoughnessSummary {
    /// Median of the month-hour medians: the site covariate.
    pub site_roughness: f64,
    /// Up to 288 (month, hour) cells with records.
    pub table: Vec<MonthHourMedian>,
    pub neutral_records: usize,
    /// Calm (zero-wind) neutral records excluded as degenerate.
    pub excluded_calm: usize,
}

fn median_sorted(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-hour roughness length under the logarithmic wind profile at neutral
/// stability: z0 = z exp(-u k / u*), aggregated to (month, hour) medians
/// and an overall site median. Only records with |L| above the neutrality
/// threshold enter; calm hours are excluded as degenerate.
pub fn roughness_length(records: &[FluxRecord], von_karman: f64) -> Result<RoughnessSummary> {
    use chrono::Timelike;
    if !(von_karman > 0.0) {
        return Err(Error::config("von Karman constant must be positive"));
    }
    let mut cells: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    let mut neutral = 0usize;
    let mut calm = 0usize;
    for r in records {
        if r.obukhov_l.abs() <= NEUTRAL_OBUKHOV_M {
            continue;
        }
        neutral += 1;
        if r.wind_ms <= 0.0 {
            calm += 1;
            continue;
        }
        let z0 = WIND_HEIGHT_M * (-r.wind_ms * von_karman / r.ustar).exp();
        use chrono::Datelike;
        cells
            .entry((r.timestamp.month(), r.timestamp.hour()))
            .or_default()
            .push(z0);
    }
    if cells.is_empty() {
        return Err(Error::data(
            "no neutral-stability records with nonzero wind",
        ));
    }
    let table: Vec<MonthHourMedian> = cells
        .into_iter()
        .map(|((month, hour), v)| MonthHourMedian {
            month,
            hour,
            count: v.len(),
            z0: median_sorted(v),
        })
        .collect();
    let site = median_sorted(table.iter().map(|c| c.z0).collect());
    Ok(RoughnessSummary {
        site_roughness: site,
        table,
        neutral_records: neutral,
        excluded_calm: calm,
    })
}

pub fn write_roughness_table(summary: &RoughnessSummary, path: &Path) -> Result<()> {
    let mut w = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(w, "month,hour,z0,count").map_err(|e| Error::io(path, e))?;
    for c in &summary.table {
        writeln!(w, "{},{},{},{}", c.month, c.hour, c.z0, c.count).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate_scenario, ScenarioSpec};
    use tempfile::TempDir;

    fn scenario_dir() -> (TempDir, ScenarioData) {
        let mut spec = ScenarioSpec::new(2, 3).unwrap();
        spec.n_sites = 5;
        spec.t_len = 72;
        let data = generate_scenario(&spec).unwrap();
        let dir = TempDir::new().unwrap();
        write_scenario_dataset(&data, dir.path()).unwrap();
        (dir, data)
    }

    #[test]
    fn panel_round_trip_is_exact() {
        let (dir, data) = scenario_dir();
        let loaded = load_panels(
            &dir.path().join("stations.csv"),
            &dir.path().join("observations.csv"),
            &dir.path().join("ensemble.csv"),
            data.observations.censor_threshold,
            0.7,
        )
        .unwrap();
        assert!(loaded.dropped.is_empty());
        assert_eq!(loaded.observations.times, data.observations.times);
        let (t_len, n) = data.observations.values.shape();
        for t in 0..t_len {
            for i in 0..n {
                assert_eq!(loaded.observations.status(t, i), data.observations.status(t, i));
                if data.observations.status(t, i) != crate::domain::ObsStatus::Missing {
                    assert_eq!(
                        loaded.observations.values[(t, i)],
                        data.observations.values[(t, i)]
                    );
                }
                for j in 0..data.forecasts.n_members() {
                    assert_eq!(loaded.forecasts.member(t, i, j), data.forecasts.member(t, i, j));
                }
            }
        }
        for (a, b) in loaded
            .network
            .stations()
            .iter()
            .zip(data.network.stations())
        {
            assert_eq!(a.id, b.id);
            assert_eq!(a.latitude, b.latitude);
            assert_eq!(a.roughness_length, b.roughness_length);
        }
    }

    #[test]
    fn low_availability_station_is_dropped() {
        let (dir, data) = scenario_dir();
        // Rewrite observations with station 0 missing 60% of hours.
        let ids: Vec<String> = data
            .network
            .stations()
            .iter()
            .map(|s| s.id.clone())
            .collect();
        let mut panel = data.observations.clone();
        let t_len = panel.t_len();
        let n = panel.n_sites();
        let mut mask: Vec<crate::domain::ObsStatus> = (0..t_len * n)
            .map(|k| panel.status(k / n, k % n))
            .collect();
        for t in 0..(t_len * 6 / 10) {
            mask[t * n] = crate::domain::ObsStatus::Missing;
            panel.values[(t, 0)] = panel.censor_threshold;
        }
        let panel = ObservationPanel::new(
            panel.times.clone(),
            panel.values.clone(),
            mask,
            panel.censor_threshold,
        )
        .unwrap();
        let obs_path = dir.path().join("observations.csv");
        write_observations(&panel, &ids, &obs_path).unwrap();
        let loaded = load_panels(
            &dir.path().join("stations.csv"),
            &obs_path,
            &dir.path().join("ensemble.csv"),
            panel.censor_threshold,
            0.7,
        )
        .unwrap();
        assert_eq!(loaded.dropped.len(), 1);
        assert_eq!(loaded.dropped[0].0, ids[0]);
        assert_eq!(loaded.network.len(), n - 1);
        assert_eq!(loaded.forecasts.n_sites(), n - 1);
    }

    #[test]
    fn bilinear_matches_affine_field_exactly() {
        let times = crate::simulate::hourly_times(2);
        let lat_axis: Vec<f64> = (0..5).map(|i| -24.0 + 0.25 * i as f64).collect();
        let lon_axis: Vec<f64> = (0..6).map(|j| -47.0 + 0.25 * j as f64).collect();
        let f = |lat: f64, lon: f64, t: usize, m: usize| {
            3.0 + 0.8 * (lat + 24.0) + 1.3 * (lon + 47.0) + 0.1 * t as f64 + 0.05 * m as f64
        };
        let mut values = Vec::new();
        for t in 0..times.len() {
            for la in &lat_axis {
                for lo in &lon_axis {
                    for m in 0..3 {
                        values.push(f(*la, *lo, t, m));
                    }
                }
            }
        }
        let grid = GriddedForecast::new(times, lat_axis, lon_axis, 3, values).unwrap();
        let stations = vec![
            Station {
                id: "a".into(),
                latitude: -23.87,
                longitude: -46.52,
                elevation: 100.0,
                roughness_length: Some(0.1),
            },
            Station {
                id: "b".into(),
                latitude: -23.0,
                longitude: -45.75,
                elevation: 220.0,
                roughness_length: Some(0.2),
            },
        ];
        let network = StationNetwork::build(stations).unwrap();
        let panel = bilinear_to_stations(&grid, &network).unwrap();
        for t in 0..2 {
            for (i, s) in network.stations().iter().enumerate() {
                for m in 0..3 {
                    let got = panel.member(t, i, m);
                    let want = f(s.latitude, s.longitude, t, m);
                    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
                }
            }
        }
        // On-node station returns the node value; outside the hull errors.
        let filler = Station {
            id: "f".into(),
            latitude: -23.5,
            longitude: -46.5,
            elevation: 0.0,
            roughness_length: None,
        };
        let on_node = StationNetwork::build(vec![
            Station {
                id: "n".into(),
                latitude: -23.75,
                longitude: -46.75,
                elevation: 0.0,
                roughness_length: None,
            },
            filler.clone(),
        ])
        .unwrap();
        let p = bilinear_to_stations(&grid, &on_node).unwrap();
        assert!((p.member(0, 0, 0) - f(-23.75, -46.75, 0, 0)).abs() < 1e-12);
        let outside = StationNetwork::build(vec![
            Station {
                id: "x".into(),
                latitude: -30.0,
                longitude: -46.0,
                elevation: 0.0,
                roughness_length: None,
            },
            filler,
        ])
        .unwrap();
        assert!(bilinear_to_stations(&grid, &outside).is_err());
    }

    #[test]
    fn roughness_formula_and_order_invariance() {
        let times = crate::simulate::hourly_times(6);
        let mk = |i: usize, wind: f64, ustar: f64, l: f64| FluxRecord {
            timestamp: times[i],
            station_id: "s".into(),
            temperature_k: 293.0,
            pressure_pa: 101_000.0,
            ustar,
            obukhov_l: l,
            wind_ms: wind,
        };
        // One canonical record: u = 5, u* = 0.4 -> z0 = 10 exp(-5).
        let records = vec![
            mk(0, 5.0, 0.4, 800.0),
            mk(1, 5.0, 0.4, -900.0),
            mk(2, 0.0, 0.4, 700.0),  // calm: excluded
            mk(3, 5.0, 0.4, 120.0),  // non-neutral: filtered
        ];
        let summary = roughness_length(&records, VON_KARMAN).unwrap();
        let expect = 10.0 * (-5.0f64).exp();
        assert!((summary.site_roughness - expect).abs() < 1e-12);
        assert_eq!(summary.excluded_calm, 1);
        assert_eq!(summary.neutral_records, 3);
        // Doubling u* increases z0.
        let more = roughness_length(&[mk(0, 5.0, 0.8, 800.0)], VON_KARMAN).unwrap();
        assert!(more.site_roughness > summary.site_roughness);
        // Order invariance of the aggregation.
        let mut rev = records.clone();
        rev.reverse();
        let s2 = roughness_length(&rev, VON_KARMAN).unwrap();
        assert_eq!(s2.site_roughness, summary.site_roughness);
        // All non-neutral -> error.
        assert!(roughness_length(&[mk(0, 5.0, 0.4, 100.0)], VON_KARMAN).is_err());
    }

    #[test]
    fn grid_loader_round_trips_and_validates() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("grid.csv");
        let times = crate::simulate::hourly_times(2);
        let mut w = String::from("time,lat,lon,member,value\n");
        for (t, time) in times.iter().enumerate() {
            for la in [-22.0f64, -21.5] {
                for lo in [-46.0f64, -45.5, -45.0] {
                    for m in 0..2 {
                        let v = 1.0 + t as f64 + la.abs() * 0.1 + lo.abs() * 0.01 + m as f64 * 0.5;
                        w.push_str(&format!("{},{la},{lo},{m},{v}\n", time.to_rfc3339()));
                    }
                }
            }
        }
        std::fs::write(&path, &w).unwrap();
        let grid = load_grid(&path).unwrap();
        assert_eq!(grid.lat_axis, vec![-22.0, -21.5]);
        assert_eq!(grid.lon_axis.len(), 3);
        assert_eq!(grid.n_members, 2);
        assert!((grid.value(1, 0, 2, 1) - (1.0 + 1.0 + 2.2 + 0.45 + 0.5)).abs() < 1e-12);

        // Removing one row breaks completeness.
        let truncated: Vec<&str> = w.lines().take(w.lines().count() - 1).collect();
        std::fs::write(&path, truncated.join("\n")).unwrap();
        assert!(load_grid(&path).is_err());
    }

    #[test]
    fn malformed_rows_carry_line_numbers() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("stations.csv");
        std::fs::write(
            &path,
            "id,latitude,longitude,elevation,roughness_length\ns0,-21.0,-45.0,bad,0.1\n",
        )
        .unwrap();
        let err = load_stations(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("elevation"), "{err}");
    }
}
