//! Synthetic weather-field generators for the three benchmark scenarios and
//! the parameter-recovery datasets.
//!
//! All scenarios share one fixed simulated ensemble (a common truth wind
//! field plus member-specific bias and AR(1) error), so differences between
//! scenario scores come only from the generating model of the observations:
//!
//! * scenario 1: static linear calibration surface, independent noise; the
//!   ensemble is badly scaled, so any calibration helps and every model
//!   family performs alike.
//! * scenario 2: same miscalibrated scale plus a diurnal harmonic whose
//!   amplitude is modulated over multiple days (a slow synoptic cycle with
//!   an AR(1) wander on top) and a spatially correlated error field with a
//!   stochastic precision path. A window-long static fit averages the
//!   modulation into a stale, phase-lagged amplitude; discount filters
//!   track it.
//! * scenario 3: the ensemble mean enters through its own Box-Cox image
//!   (an unbiased forecast), there is no static harmonic at all, and the
//!   diurnal amplitude is pure multi-day modulation plus fast texture,
//!   with spread-skill spatial noise. A window average of the modulation
//!   is anti-phased with the verification day, so the static regression
//!   injects a harmonic that hurts: the regime where plain regression
//!   fails to improve on a calibrated ensemble.

use chrono::{DateTime, Duration, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    Discounts, ForecastPanel, ObsStatus, ObservationPanel, Station, StationNetwork,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::spatial;
use crate::transform;

/// Hourly timestamps starting at a fixed epoch (southern-hemisphere summer).
pub fn hourly_times(t_len: usize) -> Vec<DateTime<Utc>> {
    let start = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    (0..t_len).map(|t| start + Duration::hours(t as i64)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// 1, 2 or 3.
    pub scenario: u8,
    pub n_sites: usize,
    pub t_len: usize,
    pub lambda: f64,
    pub censor: f64,
    pub n_members: usize,
    /// Side of the square region the jittered station grid spans.
    pub region_km: f64,
    /// Exponential-decay practical range of the generating error field.
    /// `None` resolves to the per-scenario default.
    pub practical_range_km: Option<f64>,
    /// Independent error variance on the transformed scale (scenario 1 and
    /// the scalar-precision center for scenario 2). `None` = default.
    pub sigma2: Option<f64>,
    /// Spread-skill coefficients for scenario 3. `None` = default.
    pub beta: Option<[f64; 2]>,
    /// Recorded in the truth file so recovery fits know the generating
    /// temporal setup.
    pub discounts: Discounts,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: u8, seed: u64) -> Result<Self> {
        if !(1..=3).contains(&scenario) {
            return Err(Error::config(format!(
                "scenario must be 1, 2 or 3, got {scenario}"
            )));
        }
        Ok(ScenarioSpec {
            scenario,
            n_sites: 20,
            t_len: 480,
            lambda: 0.5,
            censor: 0.0,
            n_members: 10,
            region_km: 600.0,
            practical_range_km: None,
            sigma2: None,
            beta: None,
            discounts: Discounts::DEFAULT_DYNAMIC,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.scenario) {
            return Err(Error::config("scenario must be 1, 2 or 3"));
        }
        if self.n_sites < 3 {
            return Err(Error::config("need at least 3 sites"));
        }
        if self.t_len < 48 {
            return Err(Error::config("need at least 48 hours"));
        }
        if self.n_members < 2 {
            return Err(Error::config("need at least 2 ensemble members"));
        }
        if self.censor < 0.0 {
            return Err(Error::config("censor threshold must be >= 0"));
        }
        if !(self.region_km > 0.0) {
            return Err(Error::config("region size must be positive"));
        }
        self.discounts.validate()?;
        Ok(())
    }
}

/// Every generating quantity a recovery test needs, serialized next to the
/// emitted dataset as truth.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub scenario: u8,
    pub seed: u64,
    pub n_sites: usize,
    pub t_len: usize,
    pub lambda: f64,
    pub censor: f64,
    /// Static calibration map x = intercept + slope * fbar; scenario 3 uses
    /// the Box-Cox image of fbar instead and sets the slope to NaN-free 1.
    pub intercept: f64,
    pub slope: f64,
    pub mean_follows_ensemble: bool,
    /// Static diurnal amplitude (cos, sin) on the transformed scale.
    pub harmonic: [f64; 2],
    /// AR(1) amplitude-wander components: (lag-1 correlation, stationary
    /// sd), applied independently to the cos and sin coefficients.
    pub amplitude_drift: Vec<(f64, f64)>,
    /// Slow quasi-periodic amplitude modulation: (period in hours,
    /// amplitude), applied to the cos and sin coefficients with
    /// independent random phases. Represents multi-day synoptic
    /// modulation of the diurnal cycle.
    pub amplitude_cycle: Vec<(f64, f64)>,
    /// Level drift of the intercept: (lag-1 correlation, stationary sd).
    pub level_drift: (f64, f64),
    pub phi_decay: Option<f64>,
    pub practical_range_km: Option<f64>,
    pub sigma2: Option<f64>,
    pub beta: Option<[f64; 2]>,
    pub discounts: Discounts,
    /// Scalar precision path of the error field (scenario 2 / recovery).
    pub precision_path: Option<Vec<f64>>,
    /// Realized intercept drift path (level + amplitude wander excluded).
    pub level_path: Vec<f64>,
    /// Per-site expected number of censored hours and its binomial
    /// variance, from the exact latent means and variances.
    pub expected_censored: Vec<f64>,
    pub variance_censored: Vec<f64>,
    pub censored_fraction: f64,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub network: StationNetwork,
    pub forecasts: ForecastPanel,
    pub observations: ObservationPanel,
    pub truth: TruthRecord,
}

// Internal per-scenario generating constants. Values on the transformed
// scale; chosen so the documented orderings hold with margin at desk scale.
struct GenParams {
    intercept: f64,
    slope: f64,
    mean_follows_ensemble: bool,
    harmonic: [f64; 2],
    amplitude_drift: Vec<(f64, f64)>,
    amplitude_cycle: Vec<(f64, f64)>,
    level_drift: (f64, f64),
    sigma2: f64,
    beta: Option<[f64; 2]>,
    practical_range_km: Option<f64>,
    stochastic_precision: bool,
    missing_rate: f64,
}

fn scenario_params(spec: &ScenarioSpec) -> GenParams {
    match spec.scenario {
        1 => GenParams {
            intercept: 0.2,
            slope: 0.28,
            mean_follows_ensemble: false,
            harmonic: [0.0, 0.0],
            amplitude_drift: vec![],
            amplitude_cycle: vec![],
            level_drift: (0.0, 0.0),
            sigma2: spec.sigma2.unwrap_or(0.0625),
            beta: None,
            practical_range_km: None,
            stochastic_precision: false,
            missing_rate: 0.0,
        },
        2 => GenParams {
            intercept: 0.2,
            slope: 0.28,
            mean_follows_ensemble: false,
            harmonic: [0.6, 0.3],
            amplitude_drift: vec![(0.99, 0.8)],
            amplitude_cycle: vec![(300.0, 1.4)],
            level_drift: (0.9975, 0.35),
            sigma2: spec.sigma2.unwrap_or(0.09),
            beta: None,
            practical_range_km: Some(spec.practical_range_km.unwrap_or(150.0)),
            stochastic_precision: true,
            missing_rate: 0.0,
        },
        _ => GenParams {
            intercept: 0.0,
            slope: 1.0,
            mean_follows_ensemble: true,
            harmonic: [0.0, 0.0],
            amplitude_drift: vec![(0.9, 0.3)],
            amplitude_cycle: vec![(300.0, 1.4)],
            level_drift: (0.0, 0.0),
            sigma2: spec.sigma2.unwrap_or(0.0),
            beta: Some(spec.beta.unwrap_or([0.12, 0.3])),
            practical_range_km: Some(spec.practical_range_km.unwrap_or(450.0)),
            stochastic_precision: false,
            missing_rate: 0.0,
        },
    }
}

/// Jittered-grid station network over a square region. Deterministic for a
/// given RNG state.
pub fn build_network<R: Rng>(n: usize, region_km: f64, rng: &mut R) -> Result<StationNetwork> {
    let center_lat: f64 = -21.5;
    let center_lon = -45.5;
    let km_per_deg_lat = 111.19;
    let km_per_deg_lon = 111.19 * center_lat.to_radians().cos().abs();

    let side = (n as f64).sqrt().ceil() as usize;
    let cell = region_km / side as f64;
    let mut stations = Vec::with_capacity(n);
    for k in 0..n {
        let row = k / side;
        let col = k % side;
        let jx: f64 = rng.random::<f64>() - 0.5;
        let jy: f64 = rng.random::<f64>() - 0.5;
        let x_km = (col as f64 + 0.5 + 0.6 * jx) * cell - region_km / 2.0;
        let y_km = (row as f64 + 0.5 + 0.6 * jy) * cell - region_km / 2.0;
        let elevation = 200.0 + 900.0 * rng.random::<f64>();
        let z0 = (0.02f64.ln() + (0.4f64.ln() - 0.02f64.ln()) * rng.random::<f64>()).exp();
        stations.push(Station {
            id: format!("S{:02}", k + 1),
            latitude: center_lat + y_km / km_per_deg_lat,
            longitude: center_lon + x_km / km_per_deg_lon,
            elevation,
            roughness_length: Some(z0),
        });
    }
    StationNetwork::build(stations)
}

fn ar1_path<R: Rng>(t_len: usize, rho: f64, stationary_sd: f64, rng: &mut R) -> Vec<f64> {
    if stationary_sd == 0.0 || t_len == 0 {
        return vec![0.0; t_len];
    }
    let innov = stationary_sd * (1.0 - rho * rho).max(0.0).sqrt();
    let mut path = Vec::with_capacity(t_len);
    let z0: f64 = StandardNormal.sample(rng);
    path.push(stationary_sd * z0);
    for t in 1..t_len {
        let z: f64 = StandardNormal.sample(rng);
        path.push(rho * path[t - 1] + innov * z);
    }
    path
}

/// Multiplicative stochastic precision path with martingale increments:
/// phi_t = gamma_t phi_{t-1} / delta with gamma_t ~ Beta(delta k/2,
/// (1-delta) k/2), so E[phi_t | phi_{t-1}] = phi_{t-1}.
fn precision_path<R: Rng>(
    t_len: usize,
    phi0: f64,
    delta: f64,
    k: f64,
    rng: &mut R,
) -> Vec<f64> {
    let beta = Beta::new(delta * k / 2.0, (1.0 - delta) * k / 2.0).expect("valid beta");
    let mut path = Vec::with_capacity(t_len);
    let mut phi = phi0;
    for _ in 0..t_len {
        phi = beta.sample(rng) * phi / delta;
        path.push(phi);
    }
    path
}

/// The shared synthetic truth wind and ensemble members. Members are the
/// truth plus a member-specific bias and an AR(1) error, which keeps
/// inter-member correlation high. `level` sets the typical wind speed.
fn build_ensemble<R: Rng>(
    t_len: usize,
    n_sites: usize,
    n_members: usize,
    level: f64,
    rng: &mut R,
) -> Result<ForecastPanel> {
    let site_effect: Vec<f64> = (0..n_sites)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            0.12 * z
        })
        .collect();
    let shared = ar1_path(t_len, 0.97, 0.25, rng);
    let mut local = Vec::with_capacity(n_sites);
    for _ in 0..n_sites {
        local.push(ar1_path(t_len, 0.9, 0.15, rng));
    }
    let omega = 2.0 * std::f64::consts::PI / 24.0;
    let mut truth = DMatrix::zeros(t_len, n_sites);
    for t in 0..t_len {
        let diurnal = 0.22 * (omega * t as f64 + 0.6).sin();
        for i in 0..n_sites {
            truth[(t, i)] =
                (level.ln() + diurnal + site_effect[i] + shared[t] + local[i][t]).exp();
        }
    }

    let biases: Vec<f64> = (0..n_members)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            0.2 * z
        })
        .collect();
    let mut members = vec![0.0; t_len * n_sites * n_members];
    for j in 0..n_members {
        for i in 0..n_sites {
            let err = ar1_path(t_len, 0.85, 0.45, rng);
            for t in 0..t_len {
                members[(t * n_sites + i) * n_members + j] =
                    (truth[(t, i)] + biases[j] + err[t]).max(0.0);
            }
        }
    }
    ForecastPanel::from_members(hourly_times(t_len), n_sites, n_members, members)
}

struct FieldComponents {
    mean: DMatrix<f64>,
    /// Marginal sd of the latent error per cell.
    sd: DMatrix<f64>,
    level_path: Vec<f64>,
    precision: Option<Vec<f64>>,
}

/// Latent mean field and per-cell error sd for one scenario, plus the
/// realized error draw added into `x`.
fn generate_latent<R: Rng>(
    spec: &ScenarioSpec,
    params: &GenParams,
    network: &StationNetwork,
    forecasts: &ForecastPanel,
    x: &mut DMatrix<f64>,
    rng: &mut R,
) -> Result<FieldComponents> {
    let t_len = spec.t_len;
    let n = spec.n_sites;
    let omega = 2.0 * std::f64::consts::PI / 24.0;

    let level = ar1_path(t_len, params.level_drift.0, params.level_drift.1, rng);
    let mut amp_cos = vec![params.harmonic[0]; t_len];
    let mut amp_sin = vec![params.harmonic[1]; t_len];
    for &(rho, sd) in &params.amplitude_drift {
        let pc = ar1_path(t_len, rho, sd, rng);
        let ps = ar1_path(t_len, rho, sd, rng);
        for t in 0..t_len {
            amp_cos[t] += pc[t];
            amp_sin[t] += ps[t];
        }
    }
    for &(period, kappa) in &params.amplitude_cycle {
        let w = 2.0 * std::f64::consts::PI / period;
        let tau = 2.0 * std::f64::consts::PI;
        let psi_c: f64 = tau * rng.random::<f64>();
        let psi_s: f64 = tau * rng.random::<f64>();
        for t in 0..t_len {
            amp_cos[t] += kappa * (w * t as f64 + psi_c).cos();
            amp_sin[t] += kappa * (w * t as f64 + psi_s).cos();
        }
    }

    let mut mean = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        let harm = amp_cos[t] * (omega * t as f64).cos() + amp_sin[t] * (omega * t as f64).sin();
        for i in 0..n {
            let fbar = forecasts.ensemble_mean[(t, i)];
            let base = if params.mean_follows_ensemble {
                transform::box_cox(fbar.max(0.05), spec.lambda)
            } else {
                params.intercept + params.slope * fbar
            };
            mean[(t, i)] = base + level[t] + harm;
        }
    }

    // Error field: iid, scalar-precision spatial, or spread-skill spatial.
    let mut sd = DMatrix::zeros(t_len, n);
    let precision;
    match (&params.beta, params.practical_range_km) {
        (None, None) => {
            let s = params.sigma2.sqrt();
            for t in 0..t_len {
                for i in 0..n {
                    let z: f64 = StandardNormal.sample(rng);
                    x[(t, i)] = mean[(t, i)] + s * z;
                    sd[(t, i)] = s;
                }
            }
            precision = None;
        }
        (beta, Some(range)) => {
            let phi = spatial::phi_for_practical_range(range);
            let h = spatial::correlation_from_distances(network.distances_km(), phi);
            let chol = linalg::cholesky_with_jitter(&h, "scenario correlation")?.l();
            let phi_path = if params.stochastic_precision {
                let p = precision_path(t_len, 1.0 / params.sigma2, spec.discounts.delta_v, 40.0, rng);
                Some(p)
            } else {
                None
            };
            for t in 0..t_len {
                let z = DVector::from_fn(n, |_, _| {
                    let v: f64 = StandardNormal.sample(rng);
                    v
                });
                let mut e = &chol * z;
                match beta {
                    Some(b) => {
                        for i in 0..n {
                            let d = (b[0] + b[1] * forecasts.ensemble_var[(t, i)]).sqrt();
                            e[i] *= d;
                            sd[(t, i)] = d;
                        }
                    }
                    None => {
                        let s = match &phi_path {
                            Some(p) => (1.0 / p[t]).sqrt(),
                            None => params.sigma2.sqrt(),
                        };
                        e *= s;
                        for i in 0..n {
                            sd[(t, i)] = s;
                        }
                    }
                }
                for i in 0..n {
                    x[(t, i)] = mean[(t, i)] + e[i];
                }
            }
            precision = phi_path;
        }
        (Some(_), None) => {
            return Err(Error::config(
                "spread-skill noise needs a spatial practical range",
            ));
        }
    }

    Ok(FieldComponents {
        mean,
        sd,
        level_path: level,
        precision,
    })
}

/// Censored back-transform of a latent panel into observations, with an
/// optional missing-at-random mask.
fn observe_panel<R: Rng>(
    x: &DMatrix<f64>,
    lambda: f64,
    censor: f64,
    missing_rate: f64,
    times: Vec<DateTime<Utc>>,
    rng: &mut R,
) -> Result<(ObservationPanel, f64, f64)> {
    let (t_len, n) = x.shape();
    let mut values = DMatrix::zeros(t_len, n);
    let mut mask = vec![ObsStatus::Observed; t_len * n];
    let mut censored = 0usize;
    let mut missing = 0usize;
    let c_bar = transform::censored_threshold(censor, lambda);
    for t in 0..t_len {
        for i in 0..n {
            if missing_rate > 0.0 && rng.random::<f64>() < missing_rate {
                mask[t * n + i] = ObsStatus::Missing;
                missing += 1;
                continue;
            }
            let y = transform::to_observed(x[(t, i)], lambda, censor);
            values[(t, i)] = y;
            if x[(t, i)] <= c_bar {
                mask[t * n + i] = ObsStatus::CensoredAtC;
                censored += 1;
            }
        }
    }
    let total = (t_len * n) as f64;
    let panel = ObservationPanel::new(times, values, mask, censor)?;
    Ok((panel, censored as f64 / total, missing as f64 / total))
}

fn expected_censoring(
    mean: &DMatrix<f64>,
    sd: &DMatrix<f64>,
    c_bar: f64,
) -> (Vec<f64>, Vec<f64>) {
    use statrs::distribution::{ContinuousCDF, Normal};
    let (t_len, n) = mean.shape();
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let mut expected = vec![0.0; n];
    let mut variance = vec![0.0; n];
    if c_bar.is_finite() {
        for i in 0..n {
            for t in 0..t_len {
                let p = nrm.cdf((c_bar - mean[(t, i)]) / sd[(t, i)]);
                expected[i] += p;
                variance[i] += p * (1.0 - p);
            }
        }
    }
    (expected, variance)
}

/// Generate one scenario: seed streams keep the station network and the
/// ensemble identical across scenarios for a given seed, so scenario
/// differences are purely in the observation-generating model.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<ScenarioData> {
    spec.validate()?;
    let params = scenario_params(spec);

    let mut geo_rng = ChaCha20Rng::seed_from_u64(spec.seed);
    geo_rng.set_stream(1);
    let network = build_network(spec.n_sites, spec.region_km, &mut geo_rng)?;

    let mut ens_rng = ChaCha20Rng::seed_from_u64(spec.seed);
    ens_rng.set_stream(2);
    let forecasts = build_ensemble(spec.t_len, spec.n_sites, spec.n_members, 5.0, &mut ens_rng)?;

    let mut field_rng = ChaCha20Rng::seed_from_u64(spec.seed);
    field_rng.set_stream(10 + spec.scenario as u64);
    let mut x = DMatrix::zeros(spec.t_len, spec.n_sites);
    let parts = generate_latent(spec, &params, &network, &forecasts, &mut x, &mut field_rng)?;

    let (observations, censored_fraction, missing_fraction) = observe_panel(
        &x,
        spec.lambda,
        spec.censor,
        params.missing_rate,
        hourly_times(spec.t_len),
        &mut field_rng,
    )?;

    let c_bar = transform::censored_threshold(spec.censor, spec.lambda);
    let (expected_censored, variance_censored) = expected_censoring(&parts.mean, &parts.sd, c_bar);

    let truth = TruthRecord {
        scenario: spec.scenario,
        seed: spec.seed,
        n_sites: spec.n_sites,
        t_len: spec.t_len,
        lambda: spec.lambda,
        censor: spec.censor,
        intercept: params.intercept,
        slope: params.slope,
        mean_follows_ensemble: params.mean_follows_ensemble,
        harmonic: params.harmonic,
        amplitude_drift: params.amplitude_drift.clone(),
        amplitude_cycle: params.amplitude_cycle.clone(),
        level_drift: params.level_drift,
        phi_decay: params
            .practical_range_km
            .map(spatial::phi_for_practical_range),
        practical_range_km: params.practical_range_km,
        sigma2: if params.beta.is_none() {
            Some(params.sigma2)
        } else {
            None
        },
        beta: params.beta,
        discounts: spec.discounts,
        precision_path: parts.precision,
        level_path: parts.level_path,
        expected_censored,
        variance_censored,
        censored_fraction,
        missing_fraction,
    };

    Ok(ScenarioData {
        network,
        forecasts,
        observations,
        truth,
    })
}

/// Spatially correlated dataset with stochastic precision, mild level
/// drift, a small static harmonic and a censor threshold placed to leave a
/// visible censored fraction: the workhorse for recovery and sensitivity
/// studies. The practical range defaults to half the realized maximum
/// station distance.
pub fn generate_recovery_dataset(
    n_sites: usize,
    t_len: usize,
    lambda: f64,
    practical_range_km: Option<f64>,
    discounts: Discounts,
    seed: u64,
) -> Result<ScenarioData> {
    if n_sites < 3 {
        return Err(Error::config("need at least 3 sites"));
    }
    if t_len < 48 {
        return Err(Error::config("need at least 48 hours"));
    }
    let mut geo_rng = ChaCha20Rng::seed_from_u64(seed);
    geo_rng.set_stream(1);
    let network = build_network(n_sites, 600.0, &mut geo_rng)?;
    let range = practical_range_km.unwrap_or(network.max_distance_km() / 2.0);

    let mut ens_rng = ChaCha20Rng::seed_from_u64(seed);
    ens_rng.set_stream(2);
    let forecasts = build_ensemble(t_len, n_sites, 10, 2.2, &mut ens_rng)?;

    let censor = 0.5;
    let spec = ScenarioSpec {
        scenario: 2,
        n_sites,
        t_len,
        lambda,
        censor,
        n_members: 10,
        region_km: 600.0,
        practical_range_km: Some(range),
        sigma2: Some(0.36),
        beta: None,
        discounts,
        seed,
    };
    let params = GenParams {
        intercept: -0.5,
        slope: 0.5,
        mean_follows_ensemble: false,
        harmonic: [0.2, 0.1],
        amplitude_drift: vec![],
        amplitude_cycle: vec![],
        level_drift: (0.999, 0.15),
        sigma2: 0.36,
        beta: None,
        practical_range_km: Some(range),
        stochastic_precision: true,
        missing_rate: 0.02,
    };

    let mut field_rng = ChaCha20Rng::seed_from_u64(seed);
    field_rng.set_stream(20);
    let mut x = DMatrix::zeros(t_len, n_sites);
    let parts = generate_latent(&spec, &params, &network, &forecasts, &mut x, &mut field_rng)?;
    let (observations, censored_fraction, missing_fraction) = observe_panel(
        &x,
        lambda,
        censor,
        params.missing_rate,
        hourly_times(t_len),
        &mut field_rng,
    )?;

    let c_bar = transform::censored_threshold(censor, lambda);
    let (expected_censored, variance_censored) = expected_censoring(&parts.mean, &parts.sd, c_bar);

    let truth = TruthRecord {
        scenario: 0,
        seed,
        n_sites,
        t_len,
        lambda,
        censor,
        intercept: params.intercept,
        slope: params.slope,
        mean_follows_ensemble: false,
        harmonic: params.harmonic,
        amplitude_drift: params.amplitude_drift.clone(),
        amplitude_cycle: params.amplitude_cycle.clone(),
        level_drift: params.level_drift,
        phi_decay: Some(spatial::phi_for_practical_range(range)),
        practical_range_km: Some(range),
        sigma2: Some(params.sigma2),
        beta: None,
        discounts,
        precision_path: parts.precision,
        level_path: parts.level_path,
        expected_censored,
        variance_censored,
        censored_fraction,
        missing_fraction,
    };

    Ok(ScenarioData {
        network,
        forecasts,
        observations,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_is_bit_identical() {
        let spec = ScenarioSpec {
            n_sites: 6,
            t_len: 72,
            ..ScenarioSpec::new(2, 7).unwrap()
        };
        let a = generate_scenario(&spec).unwrap();
        let b = generate_scenario(&spec).unwrap();
        assert_eq!(a.observations.values, b.observations.values);
        assert_eq!(a.forecasts.ensemble_mean, b.forecasts.ensemble_mean);
        assert_eq!(
            a.network.stations()[0].latitude,
            b.network.stations()[0].latitude
        );
    }

    #[test]
    fn ensemble_is_shared_across_scenarios() {
        let mk = |s| ScenarioSpec {
            n_sites: 6,
            t_len: 72,
            ..ScenarioSpec::new(s, 11).unwrap()
        };
        let one = generate_scenario(&mk(1)).unwrap();
        let three = generate_scenario(&mk(3)).unwrap();
        assert_eq!(one.forecasts.ensemble_mean, three.forecasts.ensemble_mean);
        assert_eq!(one.forecasts.member(5, 2, 3), three.forecasts.member(5, 2, 3));
        // Observations differ: different generating models.
        assert_ne!(one.observations.values, three.observations.values);
    }

    #[test]
    fn observations_never_fall_below_threshold() {
        let data = generate_recovery_dataset(
            6,
            120,
            0.5,
            None,
            Discounts::DEFAULT_DYNAMIC,
            3,
        )
        .unwrap();
        let obs = &data.observations;
        for t in 0..obs.t_len() {
            for i in 0..obs.n_sites() {
                if obs.status(t, i) != ObsStatus::Missing {
                    assert!(obs.values[(t, i)] >= obs.censor_threshold);
                }
            }
        }
        assert!(data.truth.censored_fraction > 0.0, "recovery setup should censor");
        assert!(data.truth.missing_fraction > 0.0);
    }

    #[test]
    fn censored_mass_matches_latent_tail_sitewise() {
        // One long panel; compare realized per-site censored counts to the
        // exact latent tail probabilities within 3 binomial SE.
        let data = generate_recovery_dataset(
            5,
            2000,
            0.5,
            None,
            Discounts::DEFAULT_DYNAMIC,
            9,
        )
        .unwrap();
        let obs = &data.observations;
        for i in 0..obs.n_sites() {
            let mut got = 0.0;
            let mut missing = 0.0;
            for t in 0..obs.t_len() {
                match obs.status(t, i) {
                    ObsStatus::CensoredAtC => got += 1.0,
                    ObsStatus::Missing => missing += 1.0,
                    ObsStatus::Observed => {}
                }
            }
            // Missing cells hide their censoring state; scale expectation
            // down by the observed share.
            let keep = 1.0 - missing / obs.t_len() as f64;
            let want = data.truth.expected_censored[i] * keep;
            let se = (data.truth.variance_censored[i] * keep).sqrt().max(1.0);
            assert!(
                (got - want).abs() <= 3.0 * se,
                "site {i}: censored {got} vs expected {want:.1} (se {se:.1})"
            );
        }
    }

    #[test]
    fn noiseless_identity_map_shifts_by_one() {
        // lambda = 1 and zero noise: y = x + 1 exactly on uncensored cells.
        let spec = ScenarioSpec {
            n_sites: 4,
            t_len: 48,
            lambda: 1.0,
            sigma2: Some(0.0),
            ..ScenarioSpec::new(1, 5).unwrap()
        };
        let data = generate_scenario(&spec).unwrap();
        for t in 0..48 {
            for i in 0..4 {
                let fbar = data.forecasts.ensemble_mean[(t, i)];
                let latent = 0.2 + 0.28 * fbar;
                let want = (latent + 1.0).max(0.0);
                assert!((data.observations.values[(t, i)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scenario_spec_rejects_bad_input() {
        assert!(ScenarioSpec::new(4, 1).is_err());
        let mut spec = ScenarioSpec::new(1, 1).unwrap();
        spec.n_sites = 2;
        assert!(spec.validate().is_err());
    }
}
