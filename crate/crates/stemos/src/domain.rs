//! Core data model: stations, observation/forecast panels, model
//! configuration and posterior-draw containers. Everything is immutable
//! after construction and safe to share across workers.

use chrono::{DateTime, Datelike, Utc};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Number of state components: intercept, ensemble-mean slope, roughness,
/// elevation, latitude, longitude, and a two-component daily harmonic.
pub const STATE_DIM: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub elevation: f64,
    /// Aerodynamic roughness length in meters, when available.
    pub roughness_length: Option<f64>,
}

impl Station {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::data(format!(
                "station {}: latitude {} out of [-90, 90]",
                self.id, self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::data(format!(
                "station {}: longitude {} out of [-180, 180]",
                self.id, self.longitude
            )));
        }
        if !self.elevation.is_finite() {
            return Err(Error::data(format!(
                "station {}: non-finite elevation",
                self.id
            )));
        }
        if let Some(z0) = self.roughness_length {
            if !(z0 > 0.0) {
                return Err(Error::data(format!(
                    "station {}: roughness length must be > 0, got {z0}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Ordered station list plus pairwise distances in kilometers, computed on a
/// local equirectangular projection about the network centroid. On a
/// regional domain the projection error is negligible and keeps the
/// distance Euclidean, which the exponential correlation assumes.
#[derive(Debug, Clone)]
pub struct StationNetwork {
    stations: Vec<Station>,
    distances_km: DMatrix<f64>,
    centroid_lat_rad: f64,
    centroid_lon_rad: f64,
}

impl StationNetwork {
    pub fn build(stations: Vec<Station>) -> Result<Self> {
        if stations.len() < 2 {
            return Err(Error::data("network needs at least 2 stations"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &stations {
            s.validate()?;
            if !seen.insert(s.id.clone()) {
                return Err(Error::data(format!("duplicate station id {}", s.id)));
            }
        }
        let n = stations.len();
        let centroid_lat_rad =
            stations.iter().map(|s| s.latitude).sum::<f64>() / n as f64 * std::f64::consts::PI
                / 180.0;
        let centroid_lon_rad =
            stations.iter().map(|s| s.longitude).sum::<f64>() / n as f64 * std::f64::consts::PI
                / 180.0;
        let mut net = StationNetwork {
            stations,
            distances_km: DMatrix::zeros(n, n),
            centroid_lat_rad,
            centroid_lon_rad,
        };
        let xy: Vec<(f64, f64)> = net
            .stations
            .iter()
            .map(|s| net.project_km(s.latitude, s.longitude))
            .collect();
        for i in 0..n {
            for j in 0..n {
                let dx = xy[i].0 - xy[j].0;
                let dy = xy[i].1 - xy[j].1;
                net.distances_km[(i, j)] = (dx * dx + dy * dy).sqrt();
            }
        }
        Ok(net)
    }

    /// Project geographic coordinates to kilometers in the network's local
    /// plane. Used for both station distances and kriging target sites so
    /// all distances live in one consistent metric.
    pub fn project_km(&self, latitude: f64, longitude: f64) -> (f64, f64) {
        let lat = latitude * std::f64::consts::PI / 180.0;
        let lon = longitude * std::f64::consts::PI / 180.0;
        let x = EARTH_RADIUS_KM * (lon - self.centroid_lon_rad) * self.centroid_lat_rad.cos();
        let y = EARTH_RADIUS_KM * (lat - self.centroid_lat_rad);
        (x, y)
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

    pub fn distances_km(&self) -> &DMatrix<f64> {
        &self.distances_km
    }

    pub fn max_distance_km(&self) -> f64 {
        self.distances_km.iter().cloned().fold(0.0, f64::max)
    }
}

/// Per-cell sample mean and variance of the ensemble members, divisor m-1
/// (variance 0 when m = 1).
pub fn ensemble_summaries(members: &[f64]) -> (f64, f64) {
    let m = members.len();
    assert!(m >= 1, "ensemble must have at least one member");
    let mean = members.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let ss = members.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (m - 1) as f64)
}

/// Ensemble forecast panel: T x n x m member values plus the per-cell mean
/// f-bar and variance S^2 that the calibration models actually consume.
#[derive(Debug, Clone)]
pub struct ForecastPanel {
    pub times: Vec<DateTime<Utc>>,
    n_members: usize,
    /// Flat member storage indexed [t][site][member].
    members: Vec<f64>,
    pub ensemble_mean: DMatrix<f64>,
    pub ensemble_var: DMatrix<f64>,
}

impl ForecastPanel {
    pub fn from_members(
        times: Vec<DateTime<Utc>>,
        n_sites: usize,
        n_members: usize,
        members: Vec<f64>,
    ) -> Result<Self> {
        let t_len = times.len();
        if members.len() != t_len * n_sites * n_members {
            return Err(Error::data(format!(
                "forecast panel: expected {} member values, got {}",
                t_len * n_sites * n_members,
                members.len()
            )));
        }
        if n_members < 1 {
            return Err(Error::data("forecast panel: need at least one member"));
        }
        if let Some(bad) = members.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "forecast panel: non-finite member value {bad}"
            )));
        }
        let mut mean = DMatrix::zeros(t_len, n_sites);
        let mut var = DMatrix::zeros(t_len, n_sites);
        for t in 0..t_len {
            for i in 0..n_sites {
                let base = (t * n_sites + i) * n_members;
                let (m, v) = ensemble_summaries(&members[base..base + n_members]);
                mean[(t, i)] = m;
                var[(t, i)] = v;
            }
        }
        Ok(ForecastPanel {
            times,
            n_members,
            members,
            ensemble_mean: mean,
            ensemble_var: var,
        })
    }

    pub fn t_len(&self) -> usize {
        self.times.len()
    }

    pub fn n_sites(&self) -> usize {
        self.ensemble_mean.ncols()
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn member(&self, t: usize, site: usize, j: usize) -> f64 {
        self.members[(t * self.n_sites() + site) * self.n_members + j]
    }

    pub fn members_at(&self, t: usize, site: usize) -> &[f64] {
        let base = (t * self.n_sites() + site) * self.n_members;
        &self.members[base..base + self.n_members]
    }

    /// Sub-panel over the half-open time index range `[t0, t1)`.
    pub fn window(&self, t0: usize, t1: usize) -> ForecastPanel {
        let n = self.n_sites();
        let m = self.n_members;
        ForecastPanel {
            times: self.times[t0..t1].to_vec(),
            n_members: m,
            members: self.members[t0 * n * m..t1 * n * m].to_vec(),
            ensemble_mean: self.ensemble_mean.rows(t0, t1 - t0).into_owned(),
            ensemble_var: self.ensemble_var.rows(t0, t1 - t0).into_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsStatus {
    Observed,
    CensoredAtC,
    Missing,
}

/// Observed wind panel with an exhaustive per-cell status mask. Cells
/// flagged censored store exactly the threshold value c.
#[derive(Debug, Clone)]
pub struct ObservationPanel {
    pub times: Vec<DateTime<Utc>>,
    pub values: DMatrix<f64>,
    mask: Vec<ObsStatus>,
    pub censor_threshold: f64,
}

impl ObservationPanel {
    pub fn new(
        times: Vec<DateTime<Utc>>,
        values: DMatrix<f64>,
        mask: Vec<ObsStatus>,
        censor_threshold: f64,
    ) -> Result<Self> {
        let (t_len, n) = values.shape();
        if times.len() != t_len {
            return Err(Error::data("observation panel: times/values length mismatch"));
        }
        if mask.len() != t_len * n {
            return Err(Error::data("observation panel: mask length mismatch"));
        }
        let panel = ObservationPanel {
            times,
            values,
            mask,
            censor_threshold,
        };
        for t in 0..t_len {
            for i in 0..n {
                match panel.status(t, i) {
                    ObsStatus::Observed => {
                        let v = panel.values[(t, i)];
                        if !v.is_finite() || v < censor_threshold {
                            return Err(Error::data(format!(
                                "observed value {v} below censor threshold {censor_threshold} at (t={t}, site={i})"
                            )));
                        }
                    }
                    ObsStatus::CensoredAtC => {
                        if panel.values[(t, i)] != censor_threshold {
                            return Err(Error::data(format!(
                                "censored cell (t={t}, site={i}) must store exactly {censor_threshold}"
                            )));
                        }
                    }
                    ObsStatus::Missing => {}
                }
            }
        }
        Ok(panel)
    }

    pub fn t_len(&self) -> usize {
        self.times.len()
    }

    pub fn n_sites(&self) -> usize {
        self.values.ncols()
    }

    pub fn status(&self, t: usize, site: usize) -> ObsStatus {
        self.mask[t * self.n_sites() + site]
    }

    pub fn count(&self, status: ObsStatus) -> usize {
        self.mask.iter().filter(|s| **s == status).count()
    }

    pub fn window(&self, t0: usize, t1: usize) -> ObservationPanel {
        let n = self.n_sites();
        ObservationPanel {
            times: self.times[t0..t1].to_vec(),
            values: self.values.rows(t0, t1 - t0).into_owned(),
            mask: self.mask[t0 * n..t1 * n].to_vec(),
            censor_threshold: self.censor_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Mos,
    Gop,
    Semos,
    Dmos,
    Dgop,
    Stemos,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Mos,
        ModelKind::Gop,
        ModelKind::Semos,
        ModelKind::Dmos,
        ModelKind::Dgop,
        ModelKind::Stemos,
    ];

    /// Dynamic kinds evolve the regression coefficients through discounts;
    /// static kinds pin every discount to 1.
    pub fn is_dynamic(self) -> bool {
        matches!(self, ModelKind::Dmos | ModelKind::Dgop | ModelKind::Stemos)
    }

    /// Spatial kinds correlate sites through the exponential correlation H;
    /// the others use H = I.
    pub fn is_spatial(self) -> bool {
        !matches!(self, ModelKind::Mos | ModelKind::Dmos)
    }

    /// Spread-skill kinds scale the error field by D_t = diag sqrt(beta0 +
    /// beta1 S^2) and run the known-covariance filter; the rest learn a
    /// scalar precision conjugately inside the filter.
    pub fn has_spread_skill(self) -> bool {
        matches!(self, ModelKind::Semos | ModelKind::Stemos)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Mos => "MOS",
            ModelKind::Gop => "GOP",
            ModelKind::Semos => "SEMOS",
            ModelKind::Dmos => "DMOS",
            ModelKind::Dgop => "DGOP",
            ModelKind::Stemos => "STEMOS",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MOS" => Ok(ModelKind::Mos),
            "GOP" => Ok(ModelKind::Gop),
            "SEMOS" => Ok(ModelKind::Semos),
            "DMOS" => Ok(ModelKind::Dmos),
            "DGOP" => Ok(ModelKind::Dgop),
            "STEMOS" => Ok(ModelKind::Stemos),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Block discount factors: delta_t for the six regression components,
/// delta_s for the two harmonic components, delta_v for the observational
/// precision.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discounts {
    pub delta_t: f64,
    pub delta_s: f64,
    pub delta_v: f64,
}

impl Discounts {
    pub const STATIC: Discounts = Discounts {
        delta_t: 1.0,
        delta_s: 1.0,
        delta_v: 1.0,
    };

    /// Shipped dynamic default, chosen by discount sensitivity analysis.
    pub const DEFAULT_DYNAMIC: Discounts = Discounts {
        delta_t: 0.99,
        delta_s: 0.95,
        delta_v: 0.99,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_t", self.delta_t),
            ("delta_s", self.delta_s),
            ("delta_v", self.delta_v),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 12_500,
            burn_in: 500,
            thin: 5,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::config(format!(
                "burn_in {} must be < iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be >= 1"));
        }
        Ok(())
    }

    /// Number of retained draws: every thin-th iteration after burn-in,
    /// starting with the first post-burn-in one.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Prior hyperparameters. theta_0 has mean 0 and scale matrix
/// `theta_scale * I`; the observational precision starts at G(n0/2, d0/2);
/// the spatial decay gets G(phi_shape, rate) with the rate defaulting to
/// max-distance/6 so the prior mode sits at the practical range; lambda is
/// normal; the spread-skill coefficients are half-normal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub theta_scale: f64,
    pub n0: f64,
    pub d0: f64,
    pub phi_shape: f64,
    pub phi_rate: Option<f64>,
    pub lambda_mean: f64,
    pub lambda_var: f64,
    pub beta_var: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            theta_scale: 1.0,
            n0: 2.0,
            d0: 0.2,
            phi_shape: 2.0,
            phi_rate: None,
            lambda_mean: 1.0,
            lambda_var: 10.0,
            beta_var: 10.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("theta_scale", self.theta_scale),
            ("n0", self.n0),
            ("d0", self.d0),
            ("phi_shape", self.phi_shape),
            ("lambda_var", self.lambda_var),
            ("beta_var", self.beta_var),
        ];
        for (name, v) in positives {
            if !(v > 0.0) {
                return Err(Error::config(format!("prior {name} must be > 0, got {v}")));
            }
        }
        if let Some(r) = self.phi_rate {
            if !(r > 0.0) {
                return Err(Error::config(format!("prior phi_rate must be > 0, got {r}")));
            }
        }
        Ok(())
    }

    /// Decay-rate prior rate parameter; defaults so the prior mode equals
    /// the practical-range decay for the given network extent.
    pub fn phi_rate_for(&self, max_distance_km: f64) -> f64 {
        self.phi_rate.unwrap_or(max_distance_km / 6.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_kind: ModelKind,
    pub discounts: Discounts,
    pub training_window_hours: usize,
    pub mcmc: McmcConfig,
    pub priors: PriorConfig,
    pub harmonic_period: usize,
}

impl ModelConfig {
    pub fn new(model_kind: ModelKind) -> Self {
        let discounts = if model_kind.is_dynamic() {
            Discounts::DEFAULT_DYNAMIC
        } else {
            Discounts::STATIC
        };
        ModelConfig {
            model_kind,
            discounts,
            training_window_hours: 240,
            mcmc: McmcConfig::default(),
            priors: PriorConfig::default(),
            harmonic_period: 24,
        }
    }

    /// Discounts actually applied by the filter: static kinds ignore the
    /// configured values and run with every discount at 1.
    pub fn effective_discounts(&self) -> Discounts {
        if self.model_kind.is_dynamic() {
            self.discounts
        } else {
            Discounts::STATIC
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.discounts.validate()?;
        self.mcmc.validate()?;
        self.priors.validate()?;
        if self.training_window_hours < STATE_DIM {
            return Err(Error::config(format!(
                "training window {} shorter than state dimension {STATE_DIM}",
                self.training_window_hours
            )));
        }
        if self.harmonic_period == 0 {
            return Err(Error::config("harmonic_period must be >= 1"));
        }
        Ok(())
    }
}

/// Covariate standardization constants used to build design rows, stored so
/// fitted models can reconstruct the design for new target sites (kriging)
/// and so archives round-trip exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub means: [f64; 4],
    pub sds: [f64; 4],
}

impl Standardization {
    /// Z-score constants over (roughness, elevation, latitude, longitude).
    /// A zero-variance covariate gets sd 1 so it centers to 0 instead of
    /// dividing by 0.
    pub fn from_network(network: &StationNetwork) -> Standardization {
        let cols: Vec<Vec<f64>> = vec![
            network
                .stations()
                .iter()
                .map(|s| s.roughness_length.unwrap_or(0.03))
                .collect(),
            network.stations().iter().map(|s| s.elevation).collect(),
            network.stations().iter().map(|s| s.latitude).collect(),
            network.stations().iter().map(|s| s.longitude).collect(),
        ];
        let mut means = [0.0; 4];
        let mut sds = [1.0; 4];
        for (k, col) in cols.iter().enumerate() {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            means[k] = mean;
            sds[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Standardization { means, sds }
    }

    pub fn apply(&self, k: usize, raw: f64) -> f64 {
        (raw - self.means[k]) / self.sds[k]
    }
}

/// One retained draw's filter end state, kept for forecasting: the moments
/// of theta_T | D_T under that draw's static parameters. For the
/// unknown-precision family `c_end` is the scale matrix (multiply by s_end
/// for a covariance); for the spread-skill family it is the covariance
/// itself and (s_end, n_end, d_end) are unused.
#[derive(Debug, Clone)]
pub struct FilterEndState {
    pub m_end: DVector<f64>,
    pub c_end: DMatrix<f64>,
    pub s_end: f64,
    pub n_end: f64,
    pub d_end: f64,
}

/// Posterior draws retained after burn-in/thinning. All per-draw vectors
/// have equal length.
#[derive(Debug, Clone, Default)]
pub struct PosteriorDraws {
    /// State paths: per draw, a (T+1) x r matrix (row 0 is theta_0).
    pub theta: Vec<DMatrix<f64>>,
    /// Precision paths phi_0..phi_T for the unknown-precision family.
    pub precision_path: Vec<Vec<f64>>,
    /// Spread-skill coefficients (beta0, beta1) for SEMOS/STEMOS.
    pub beta: Vec<[f64; 2]>,
    /// Spatial decay (1/km); absent for the H = I kinds.
    pub phi_decay: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Augmented latent values for flagged cells, aligned with the
    /// augmentation cell list stored alongside.
    pub latent_x: Vec<Vec<f64>>,
    /// Flagged (t, site) cells, fixed across draws.
    pub augmented_cells: Vec<(usize, usize)>,
    pub end_state: Vec<FilterEndState>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.lambda.len()
    }
}

/// Southern-Hemisphere meteorological season for score breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    Summer,
    Fall,
    Winter,
    Spring,
}

impl Season {
    pub fn from_time(t: DateTime<Utc>) -> Season {
        match t.month() {
            12 | 1 | 2 => Season::Summer,
            3 | 4 | 5 => Season::Fall,
            6 | 7 | 8 => Season::Winter,
            _ => Season::Spring,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Summer => "summer",
            Season::Fall => "fall",
            Season::Winter => "winter",
            Season::Spring => "spring",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::TimeZone;

    fn station(id: &str, lat: f64, lon: f64) -> Station {
        Station {
            id: id.to_string(),
            latitude: lat,
            longitude: lon,
            elevation: 100.0,
            roughness_length: Some(0.05),
        }
    }

    #[test]
    fn identical_coordinates_give_zero_distance() {
        let net = StationNetwork::build(vec![
            station("a", -19.0, -45.0),
            station("b", -19.0, -45.0),
        ])
        .unwrap();
        assert_eq!(net.distances_km()[(0, 1)], 0.0);
    }

    #[test]
    fn collinear_equally_spaced_distances() {
        // Three stations along a meridian, 1 km apart: 1 km = 1/111.19... degrees.
        let step = 1.0 / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
        let net = StationNetwork::build(vec![
            station("a", -19.0, -45.0),
            station("b", -19.0 + step, -45.0),
            station("c", -19.0 + 2.0 * step, -45.0),
        ])
        .unwrap();
        let d = net.distances_km();
        assert_relative_eq!(d[(0, 1)], 1.0, epsilon = 1e-6);
        assert_relative_eq!(d[(1, 2)], 1.0, epsilon = 1e-6);
        assert_relative_eq!(d[(0, 2)], 2.0, epsilon = 1e-6);
        // Symmetry and zero diagonal.
        for i in 0..3 {
            assert_eq!(d[(i, i)], 0.0);
            for j in 0..3 {
                assert_eq!(d[(i, j)], d[(j, i)]);
            }
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = StationNetwork::build(vec![
            station("a", -19.0, -45.0),
            station("a", -20.0, -45.0),
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn ensemble_summaries_hand_cases() {
        assert_eq!(ensemble_summaries(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        assert_eq!(ensemble_summaries(&[1.0, 2.0, 3.0]), (2.0, 1.0));
        assert_eq!(ensemble_summaries(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn panel_summaries_match_recomputation() {
        let times = vec![
            Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2020, 1, 1, 1, 0, 0).unwrap(),
        ];
        let members = vec![
            1.0, 2.0, 3.0, // t0 s0
            4.0, 4.0, 4.0, // t0 s1
            2.0, 4.0, 6.0, // t1 s0
            1.0, 1.0, 4.0, // t1 s1
        ];
        let panel = ForecastPanel::from_members(times, 2, 3, members).unwrap();
        for t in 0..2 {
            for i in 0..2 {
                let (m, v) = ensemble_summaries(panel.members_at(t, i));
                assert_relative_eq!(panel.ensemble_mean[(t, i)], m, epsilon = 1e-12);
                assert_relative_eq!(panel.ensemble_var[(t, i)], v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn observation_mask_is_exhaustive_and_validated() {
        let times = vec![Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()];
        let values = DMatrix::from_row_slice(1, 3, &[2.5, 0.0, f64::NAN]);
        let mask = vec![ObsStatus::Observed, ObsStatus::CensoredAtC, ObsStatus::Missing];
        let panel = ObservationPanel::new(times, values, mask, 0.0).unwrap();
        assert_eq!(
            panel.count(ObsStatus::Observed)
                + panel.count(ObsStatus::CensoredAtC)
                + panel.count(ObsStatus::Missing),
            3
        );
        // A censored cell must hold exactly c.
        let times = vec![Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()];
        let bad = ObservationPanel::new(
            times,
            DMatrix::from_row_slice(1, 1, &[0.3]),
            vec![ObsStatus::CensoredAtC],
            0.0,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn retained_draw_count() {
        let cfg = McmcConfig {
            iterations: 12_500,
            burn_in: 500,
            thin: 5,
            seed: 1,
        };
        assert_eq!(cfg.retained(), 2_400);
    }

    #[test]
    fn southern_seasons() {
        let t = |m| Utc.with_ymd_and_hms(2020, m, 15, 0, 0, 0).unwrap();
        assert_eq!(Season::from_time(t(1)), Season::Summer);
        assert_eq!(Season::from_time(t(4)), Season::Fall);
        assert_eq!(Season::from_time(t(7)), Season::Winter);
        assert_eq!(Season::from_time(t(10)), Season::Spring);
        assert_eq!(Season::from_time(t(12)), Season::Summer);
    }

    #[test]
    fn static_kinds_force_unit_discounts() {
        let cfg = ModelConfig::new(ModelKind::Mos);
        let d = cfg.effective_discounts();
        assert_eq!((d.delta_t, d.delta_s, d.delta_v), (1.0, 1.0, 1.0));
        let dyn_cfg = ModelConfig::new(ModelKind::Dgop);
        let dd = dyn_cfg.effective_discounts();
        assert_eq!((dd.delta_t, dd.delta_s, dd.delta_v), (0.99, 0.95, 0.99));
    }
}
