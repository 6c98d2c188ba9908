//! Model orchestration: a uniform fit/predict surface over the six
//! calibration variants, rolling refit schedules, field prediction on
//! arbitrary target points, and the on-disk archive format.
//!
//! Forecasting convention: each retained posterior draw contributes one
//! Gaussian component per (hour, site) cell. The component mean comes from
//! evolving that draw's final state through the transition matrix; the
//! component variance adds the state-evolution uncertainty accumulated
//! over the horizon (zero for static kinds) to the observational variance
//! under the draw's parameters. The drawn end-of-window precision is held
//! through the horizon (the precision evolution is a martingale, so this
//! is its conditional mean). Predictive quantiles come from bisecting the
//! resulting mixture distribution function on the observable scale, which
//! handles the censor mass at c exactly.

use std::io::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlm::{self, DesignBuilder};
use crate::domain::{
    ForecastPanel, ModelConfig, ModelKind, ObsStatus, ObservationPanel, Standardization,
    StationNetwork, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mcmc::{Pins, Sampler, SamplerDiagnostics};
use crate::spatial;
use crate::transform;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Parameters held fixed instead of sampled (nesting and oracle runs).
    pub pins: Pins,
    /// Compute the per-draw and per-site likelihood tables consumed by the
    /// DIC and LPML criteria. Skipped in rolling runs where only point
    /// forecasts are scored.
    pub compute_fit_likelihoods: bool,
    /// Cap on the posterior draws carried into prediction mixtures.
    pub prediction_draws: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            pins: Pins::default(),
            compute_fit_likelihoods: true,
            prediction_draws: 200,
        }
    }
}

/// Training-panel likelihood evaluations on the augmented (complete-data)
/// scale: censored and missing cells enter through their drawn latent
/// values, observed cells carry the change-of-variables term.
#[derive(Debug, Clone)]
pub struct FitLikelihoods {
    pub per_draw: Vec<f64>,
    pub at_posterior_mean: f64,
    /// draws x sites, each entry the site's marginal panel log-likelihood.
    pub per_site: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub config: ModelConfig,
    pub draws: crate::domain::PosteriorDraws,
    pub diagnostics: SamplerDiagnostics,
    pub training_span: (DateTime<Utc>, DateTime<Utc>),
    pub network: StationNetwork,
    pub standardization: Standardization,
    pub censor_threshold: f64,
    pub likelihoods: Option<FitLikelihoods>,
    pub prediction_draws: usize,
}

/// Fit one model on the trailing `training_window_hours` of the supplied
/// panels.
pub fn fit<R: Rng>(
    config: &ModelConfig,
    observations: &ObservationPanel,
    forecasts: &ForecastPanel,
    network: &StationNetwork,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FittedModel> {
    config.validate()?;
    let window = config.training_window_hours;
    let t_len = observations.t_len();
    if forecasts.t_len() != t_len || forecasts.n_sites() != observations.n_sites() {
        return Err(Error::data("observation and forecast panels misaligned"));
    }
    if t_len < window {
        return Err(Error::data(format!(
            "need {window} training hours, have {t_len}"
        )));
    }
    if observations.n_sites() != network.len() {
        return Err(Error::data("panel width does not match the station network"));
    }
    let obs_w = observations.window(t_len - window, t_len);
    let fc_w = forecasts.window(t_len - window, t_len);

    let standardization = Standardization::from_network(network);
    let builder = DesignBuilder::new(network, standardization.clone());
    let designs = builder.designs_for(&fc_w);
    let g = dlm::evolution_matrix(config.harmonic_period);

    let mut sampler = Sampler::new(
        config.model_kind,
        &obs_w,
        &fc_w,
        network,
        designs.clone(),
        g,
        config.effective_discounts(),
        config.priors,
        options.pins,
    )?;
    let (draws, diagnostics) = sampler.run(
        config.mcmc.iterations,
        config.mcmc.burn_in,
        config.mcmc.thin,
        rng,
    )?;

    let likelihoods = if options.compute_fit_likelihoods {
        Some(fit_likelihoods(
            config.model_kind,
            &obs_w,
            &fc_w,
            network,
            &designs,
            &draws,
        )?)
    } else {
        None
    };

    Ok(FittedModel {
        config: config.clone(),
        draws,
        diagnostics,
        training_span: (obs_w.times[0], *obs_w.times.last().unwrap()),
        network: network.clone(),
        standardization,
        censor_threshold: observations.censor_threshold,
        likelihoods,
        prediction_draws: options.prediction_draws.max(1),
    })
}

// Complete-data log-likelihood of one draw, total and per site.
struct DrawParams<'a> {
    lambda: f64,
    theta: &'a DMatrix<f64>,
    precision: Option<&'a [f64]>,
    beta: Option<[f64; 2]>,
    phi_decay: Option<f64>,
    latent: &'a [f64],
}

fn draw_loglik(
    kind: ModelKind,
    obs: &ObservationPanel,
    fc: &ForecastPanel,
    network: &StationNetwork,
    designs: &[DMatrix<f64>],
    cells: &[(usize, usize)],
    p: &DrawParams,
    log_y_sums: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let t_len = obs.t_len();
    let n = obs.n_sites();
    let mut x = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        for i in 0..n {
            if obs.status(t, i) == ObsStatus::Observed {
                x[(t, i)] = transform::box_cox(obs.values[(t, i)], p.lambda);
            }
        }
    }
    for (k, &(t, i)) in cells.iter().enumerate() {
        x[(t, i)] = p.latent[k];
    }

    let chol = if kind.is_spatial() {
        let phi = p
            .phi_decay
            .ok_or_else(|| Error::numerical("spatial kind without a decay draw"))?;
        let h = spatial::correlation_from_distances(network.distances_km(), phi);
        Some(linalg::cholesky_with_jitter(&h, "likelihood correlation")?)
    } else {
        None
    };
    let logdet_half: f64 = match &chol {
        Some(c) => {
            let l = c.l_dirty();
            (0..n).map(|i| l[(i, i)].ln()).sum()
        }
        None => 0.0,
    };

    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    let mut per_site = vec![0.0; n];
    for t in 0..t_len {
        let theta_t = p.theta.row(t + 1).transpose();
        let mu = &designs[t] * &theta_t;
        let e = DVector::from_fn(n, |i, _| x[(t, i)] - mu[i]);
        if kind.has_spread_skill() {
            let beta = p.beta.ok_or_else(|| Error::numerical("missing beta draw"))?;
            let d = DVector::from_fn(n, |i, _| {
                (beta[0] + beta[1] * fc.ensemble_var[(t, i)]).sqrt()
            });
            let scaled = DVector::from_fn(n, |i, _| e[i] / d[i]);
            let quad = match &chol {
                Some(c) => c
                    .l()
                    .solve_lower_triangular(&scaled)
                    .ok_or_else(|| Error::numerical("likelihood solve failed"))?
                    .norm_squared(),
                None => scaled.norm_squared(),
            };
            let logdet_d: f64 = (0..n).map(|i| d[i].ln()).sum();
            total += -0.5 * n as f64 * ln2pi - logdet_half - logdet_d - 0.5 * quad;
            for i in 0..n {
                let s2 = d[i] * d[i];
                per_site[i] += -0.5 * (ln2pi + s2.ln()) - e[i] * e[i] / (2.0 * s2);
            }
        } else {
            let phi_t = p
                .precision
                .ok_or_else(|| Error::numerical("missing precision path"))?[t + 1];
            let quad = match &chol {
                Some(c) => c
                    .l()
                    .solve_lower_triangular(&e)
                    .ok_or_else(|| Error::numerical("likelihood solve failed"))?
                    .norm_squared(),
                None => e.norm_squared(),
            };
            total += 0.5 * n as f64 * (phi_t.ln() - ln2pi) - logdet_half - 0.5 * phi_t * quad;
            for i in 0..n {
                per_site[i] += 0.5 * (phi_t.ln() - ln2pi) - 0.5 * phi_t * e[i] * e[i];
            }
        }
    }

    // Change of variables for the truly observed cells.
    for i in 0..n {
        per_site[i] += (p.lambda - 1.0) * log_y_sums[i];
        total += (p.lambda - 1.0) * log_y_sums[i];
    }
    Ok((total, per_site))
}

fn fit_likelihoods(
    kind: ModelKind,
    obs: &ObservationPanel,
    fc: &ForecastPanel,
    network: &StationNetwork,
    designs: &[DMatrix<f64>],
    draws: &crate::domain::PosteriorDraws,
) -> Result<FitLikelihoods> {
    let m = draws.n_draws();
    if m == 0 {
        return Err(Error::data("no retained draws"));
    }
    let n = obs.n_sites();
    let mut log_y_sums = vec![0.0; n];
    for t in 0..obs.t_len() {
        for i in 0..n {
            if obs.status(t, i) == ObsStatus::Observed && obs.values[(t, i)] > 0.0 {
                log_y_sums[i] += obs.values[(t, i)].ln();
            }
        }
    }

    let mut per_draw = Vec::with_capacity(m);
    let mut per_site = DMatrix::zeros(m, n);
    // Running means of every continuous parameter for the plug-in estimate.
    let mut mean_lambda = 0.0;
    let mut mean_theta = DMatrix::zeros(draws.theta[0].nrows(), STATE_DIM);
    let mut mean_precision = vec![0.0; obs.t_len() + 1];
    let mut mean_beta = [0.0; 2];
    let mut mean_phi_decay = 0.0;
    let mut mean_latent = vec![0.0; draws.augmented_cells.len()];

    let unknown_precision = !kind.has_spread_skill();
    for d in 0..m {
        let p = DrawParams {
            lambda: draws.lambda[d],
            theta: &draws.theta[d],
            precision: if unknown_precision {
                Some(&draws.precision_path[d])
            } else {
                None
            },
            beta: if kind.has_spread_skill() {
                Some(draws.beta[d])
            } else {
                None
            },
            phi_decay: if kind.is_spatial() {
                Some(draws.phi_decay[d])
            } else {
                None
            },
            latent: &draws.latent_x[d],
        };
        let (tot, by_site) = draw_loglik(
            kind,
            obs,
            fc,
            network,
            designs,
            &draws.augmented_cells,
            &p,
            &log_y_sums,
        )?;
        per_draw.push(tot);
        for i in 0..n {
            per_site[(d, i)] = by_site[i];
        }

        let w = 1.0 / m as f64;
        mean_lambda += w * draws.lambda[d];
        mean_theta += draws.theta[d].scale(w);
        if unknown_precision {
            for (acc, v) in mean_precision.iter_mut().zip(&draws.precision_path[d]) {
                *acc += w * v;
            }
        }
        if kind.has_spread_skill() {
            mean_beta[0] += w * draws.beta[d][0];
            mean_beta[1] += w * draws.beta[d][1];
        }
        if kind.is_spatial() {
            mean_phi_decay += w * draws.phi_decay[d];
        }
        for (acc, v) in mean_latent.iter_mut().zip(&draws.latent_x[d]) {
            *acc += w * v;
        }
    }

    let p_bar = DrawParams {
        lambda: mean_lambda,
        theta: &mean_theta,
        precision: if unknown_precision {
            Some(&mean_precision)
        } else {
            None
        },
        beta: if kind.has_spread_skill() {
            Some(mean_beta)
        } else {
            None
        },
        phi_decay: if kind.is_spatial() {
            Some(mean_phi_decay)
        } else {
            None
        },
        latent: &mean_latent,
    };
    let (at_posterior_mean, _) = draw_loglik(
        kind,
        obs,
        fc,
        network,
        designs,
        &draws.augmented_cells,
        &p_bar,
        &log_y_sums,
    )?;

    Ok(FitLikelihoods {
        per_draw,
        at_posterior_mean,
        per_site,
    })
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ProbabilisticForecast {
    /// Timestamp of the first forecast hour.
    pub origin: DateTime<Utc>,
    pub times: Vec<DateTime<Utc>>,
    pub station_ids: Vec<String>,
    /// horizon x sites matrices on the observable scale.
    pub median: DMatrix<f64>,
    pub lo90: DMatrix<f64>,
    pub hi90: DMatrix<f64>,
    /// One sampled observable panel per carried posterior draw.
    pub draws: Vec<DMatrix<f64>>,
}

impl ProbabilisticForecast {
    /// Forecast CSV: origin, station_id, horizon, median, lo90, hi90.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["origin", "station_id", "horizon", "median", "lo90", "hi90"])
            .map_err(csv_err)?;
        for h in 0..self.median.nrows() {
            for (i, id) in self.station_ids.iter().enumerate() {
                w.write_record([
                    self.origin.to_rfc3339(),
                    id.clone(),
                    (h + 1).to_string(),
                    format!("{:.6}", self.median[(h, i)]),
                    format!("{:.6}", self.lo90[(h, i)]),
                    format!("{:.6}", self.hi90[(h, i)]),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Distribution function of the predictive mixture at observable value y.
/// Each component is Gaussian on its own Box-Cox scale; censoring piles the
/// sub-threshold mass onto c.
fn mixture_cdf(y: f64, mu: &[f64], sd: &[f64], lambda: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let mut acc = 0.0;
    for k in 0..mu.len() {
        let z = (transform::box_cox(y, lambda[k]) - mu[k]) / sd[k];
        acc += nrm.cdf(z);
    }
    acc / mu.len() as f64
}

/// Quantile of the censored predictive mixture by bisection on the
/// observable scale. Exact at the censor atom.
fn mixture_quantile(p: f64, mu: &[f64], sd: &[f64], lambda: &[f64], censor: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&p) && p > 0.0);
    let eps = 1e-9;
    if mixture_cdf(censor + eps, mu, sd, lambda) >= p {
        return censor;
    }
    // Expand the bracket geometrically from the largest component mean.
    let mut hi_guess: f64 = censor + 1.0;
    for k in 0..mu.len() {
        let x_hi = mu[k] + 8.0 * sd[k];
        if let Some(y) = transform::box_cox_inverse(x_hi, lambda[k]) {
            if y.is_finite() {
                hi_guess = hi_guess.max(y);
            }
        }
    }
    let mut lo = censor;
    let mut hi = hi_guess.min(1e9);
    let mut tries = 0;
    while mixture_cdf(hi, mu, sd, lambda) < p && tries < 60 {
        hi = (hi * 2.0).min(1e12);
        tries += 1;
        if hi >= 1e12 {
            break;
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(mid, mu, sd, lambda) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn selected_draws(n_draws: usize, cap: usize) -> Vec<usize> {
    if n_draws <= cap {
        return (0..n_draws).collect();
    }
    let stride = n_draws as f64 / cap as f64;
    (0..cap).map(|k| (k as f64 * stride) as usize).collect()
}

struct CellComponents {
    /// draws x cells matrices of component means and sds on the latent
    /// scale, cells in row-major (hour, site) order.
    mu: DMatrix<f64>,
    sd: DMatrix<f64>,
    lambda: Vec<f64>,
}

/// Evolve each selected draw's end state through the horizon and collect
/// per-cell mixture components.
fn horizon_components(
    fitted: &FittedModel,
    future: &ForecastPanel,
    horizon: usize,
    selected: &[usize],
) -> Result<CellComponents> {
    let kind = fitted.config.model_kind;
    let n = fitted.network.len();
    let builder = DesignBuilder::new(&fitted.network, fitted.standardization.clone());
    let g = dlm::evolution_matrix(fitted.config.harmonic_period);
    let discounts = fitted.config.effective_discounts();
    let spread = kind.has_spread_skill();

    let mut mu = DMatrix::zeros(selected.len(), horizon * n);
    let mut sd = DMatrix::zeros(selected.len(), horizon * n);
    let mut lambda = Vec::with_capacity(selected.len());

    for (row, &d) in selected.iter().enumerate() {
        lambda.push(fitted.draws.lambda[d]);
        let end = &fitted.draws.end_state[d];
        let theta_path = &fitted.draws.theta[d];
        let mut a = theta_path.row(theta_path.nrows() - 1).transpose();
        let mut p = end.c_end.clone();
        let mut v: DMatrix<f64> = DMatrix::zeros(STATE_DIM, STATE_DIM);
        // Conditional scale of the evolution noise for the precision
        // family: the filter carries scale-unit matrices.
        let noise_scale = if spread {
            1.0
        } else {
            let phi = *fitted.draws.precision_path[d]
                .last()
                .ok_or_else(|| Error::numerical("empty precision path"))?;
            1.0 / (end.s_end * phi).max(1e-12)
        };
        let obs_var_scalar = if spread {
            0.0
        } else {
            let phi = *fitted.draws.precision_path[d].last().unwrap();
            1.0 / phi.max(1e-12)
        };
        let beta = if spread { fitted.draws.beta[d] } else { [0.0, 0.0] };

        for h in 0..horizon {
            a = &g * a;
            let (r, w) = dlm::evolve_scale(&p, &g, &discounts);
            v = &g * v * g.transpose() + w.scale(noise_scale);
            linalg::symmetrize(&mut v);
            p = r;

            let fbar_row: Vec<f64> = future.ensemble_mean.row(h).iter().cloned().collect();
            let f_t = builder.design_at(&fbar_row);
            for i in 0..n {
                let f_i = f_t.row(i).transpose();
                let mean = f_i.dot(&a);
                let state_var = (f_i.transpose() * &v * &f_i)[(0, 0)].max(0.0);
                let obs_var = if spread {
                    beta[0] + beta[1] * future.ensemble_var[(h, i)]
                } else {
                    obs_var_scalar
                };
                mu[(row, h * n + i)] = mean;
                sd[(row, h * n + i)] = (state_var + obs_var).max(1e-12).sqrt();
            }
        }
    }
    Ok(CellComponents { mu, sd, lambda })
}

/// 24-hour-style probabilistic forecast at the fitted stations.
pub fn predict<R: Rng>(
    fitted: &FittedModel,
    future: &ForecastPanel,
    horizon: usize,
    rng: &mut R,
) -> Result<ProbabilisticForecast> {
    if horizon == 0 {
        return Err(Error::config("horizon must be >= 1"));
    }
    if future.t_len() < horizon {
        return Err(Error::data(format!(
            "future ensemble covers {} hours, horizon needs {horizon}",
            future.t_len()
        )));
    }
    if future.n_sites() != fitted.network.len() {
        return Err(Error::data("future panel width does not match the network"));
    }
    let n = fitted.network.len();
    let m = fitted.draws.n_draws();
    if m == 0 {
        return Err(Error::data("fitted model holds no draws"));
    }
    let selected = selected_draws(m, fitted.prediction_draws);
    let comp = horizon_components(fitted, future, horizon, &selected)?;
    let c = fitted.censor_threshold;

    let mut median = DMatrix::zeros(horizon, n);
    let mut lo90 = DMatrix::zeros(horizon, n);
    let mut hi90 = DMatrix::zeros(horizon, n);
    let n_sel = selected.len();
    let mut mu_col = vec![0.0; n_sel];
    let mut sd_col = vec![0.0; n_sel];
    for h in 0..horizon {
        for i in 0..n {
            let cell = h * n + i;
            for r in 0..n_sel {
                mu_col[r] = comp.mu[(r, cell)];
                sd_col[r] = comp.sd[(r, cell)];
            }
            lo90[(h, i)] = mixture_quantile(0.05, &mu_col, &sd_col, &comp.lambda, c);
            median[(h, i)] = mixture_quantile(0.5, &mu_col, &sd_col, &comp.lambda, c);
            hi90[(h, i)] = mixture_quantile(0.95, &mu_col, &sd_col, &comp.lambda, c);
        }
    }

    let mut draws = Vec::with_capacity(n_sel);
    for r in 0..n_sel {
        let mut panel = DMatrix::zeros(horizon, n);
        for h in 0..horizon {
            for i in 0..n {
                let cell = h * n + i;
                let z: f64 = StandardNormal.sample(rng);
                let x = comp.mu[(r, cell)] + comp.sd[(r, cell)] * z;
                panel[(h, i)] = transform::to_observed(x, comp.lambda[r], c);
            }
        }
        draws.push(panel);
    }

    Ok(ProbabilisticForecast {
        origin: future.times[0],
        times: future.times[..horizon].to_vec(),
        station_ids: fitted
            .network
            .stations()
            .iter()
            .map(|s| s.id.clone())
            .collect(),
        median,
        lo90,
        hi90,
        draws,
    })
}

// ---------------------------------------------------------------------------
// Field prediction on target points
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub latitude: f64,
    pub longitude: f64,
    pub elevation: f64,
    pub roughness_length: f64,
    /// Ensemble mean and variance of the NWP forecast at this point for the
    /// target hour.
    pub fbar: f64,
    pub ensemble_var: f64,
}

#[derive(Debug, Clone)]
pub struct FieldForecast {
    pub time: DateTime<Utc>,
    pub median: Vec<f64>,
    pub lo90: Vec<f64>,
    pub hi90: Vec<f64>,
    /// Half-width of the 90% interval.
    pub margin_of_error: Vec<f64>,
}

/// Spatially coherent forecast at arbitrary target points for one future
/// hour (1-based offset into the future panel). Spatial kinds only: each
/// draw evolves its state, draws the station error field, and extends it to
/// the targets by conditional-Gaussian interpolation.
pub fn predict_field<R: Rng>(
    fitted: &FittedModel,
    grid: &[GridPoint],
    future: &ForecastPanel,
    hour: usize,
    rng: &mut R,
) -> Result<FieldForecast> {
    let kind = fitted.config.model_kind;
    if !kind.is_spatial() {
        return Err(Error::config(format!("{kind} has no spatial component")));
    }
    if grid.is_empty() {
        return Err(Error::config("empty target grid"));
    }
    if hour == 0 || hour > future.t_len() {
        return Err(Error::data(format!(
            "hour {hour} outside the future panel (1..={})",
            future.t_len()
        )));
    }
    let h_idx = hour - 1;
    let n = fitted.network.len();
    let n0 = grid.len();
    let g = dlm::evolution_matrix(fitted.config.harmonic_period);
    let discounts = fitted.config.effective_discounts();
    let spread = kind.has_spread_skill();
    let c = fitted.censor_threshold;

    let target_xy: Vec<(f64, f64)> = grid
        .iter()
        .map(|p| fitted.network.project_km(p.latitude, p.longitude))
        .collect();
    let target_rows: Vec<[f64; STATE_DIM]> = grid
        .iter()
        .map(|p| {
            dlm::design_row(
                &fitted.standardization,
                [p.roughness_length, p.elevation, p.latitude, p.longitude],
                p.fbar,
            )
        })
        .collect();

    let selected = selected_draws(fitted.draws.n_draws(), fitted.prediction_draws);
    let mut mu = DMatrix::zeros(selected.len(), n0);
    let mut sd = DMatrix::zeros(selected.len(), n0);
    let mut lambda = Vec::with_capacity(selected.len());

    for (row, &d) in selected.iter().enumerate() {
        lambda.push(fitted.draws.lambda[d]);
        let end = &fitted.draws.end_state[d];
        let theta_path = &fitted.draws.theta[d];
        let mut a = theta_path.row(theta_path.nrows() - 1).transpose();
        let mut p = end.c_end.clone();
        let mut v: DMatrix<f64> = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let phi_draw = if spread {
            1.0
        } else {
            *fitted.draws.precision_path[d].last().unwrap()
        };
        let noise_scale = if spread {
            1.0
        } else {
            1.0 / (end.s_end * phi_draw).max(1e-12)
        };
        for _ in 0..hour {
            a = &g * a;
            let (r, w) = dlm::evolve_scale(&p, &g, &discounts);
            v = &g * v * g.transpose() + w.scale(noise_scale);
            linalg::symmetrize(&mut v);
            p = r;
        }
        // One coherent state draw for this component.
        let theta_h = linalg::sample_mvn_psd(&a, &v, rng);

        // Station-level error field on the correlation scale.
        let phi_decay = fitted.draws.phi_decay[d];
        let h_mat = spatial::correlation_from_distances(fitted.network.distances_km(), phi_decay);
        let chol = linalg::cholesky_with_jitter(&h_mat, "field correlation")?;
        let z = DVector::from_fn(n, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            v
        });
        let u = chol.l() * z;
        let (k_mean, k_var) =
            spatial::krige_marginals(&fitted.network, &target_xy, phi_decay, 1.0, &u)?;

        let beta = if spread { fitted.draws.beta[d] } else { [0.0, 0.0] };
        for j in 0..n0 {
            let scale = if spread {
                (beta[0] + beta[1] * grid[j].ensemble_var).sqrt()
            } else {
                (1.0 / phi_draw).sqrt()
            };
            let f_j = DVector::from_row_slice(&target_rows[j]);
            mu[(row, j)] = f_j.dot(&theta_h) + scale * k_mean[j];
            sd[(row, j)] = (scale * scale * k_var[j]).max(1e-12).sqrt();
        }
    }

    let n_sel = selected.len();
    let mut median = vec![0.0; n0];
    let mut lo90 = vec![0.0; n0];
    let mut hi90 = vec![0.0; n0];
    let mut margin = vec![0.0; n0];
    let mut mu_col = vec![0.0; n_sel];
    let mut sd_col = vec![0.0; n_sel];
    for j in 0..n0 {
        for r in 0..n_sel {
            mu_col[r] = mu[(r, j)];
            sd_col[r] = sd[(r, j)];
        }
        lo90[j] = mixture_quantile(0.05, &mu_col, &sd_col, &lambda, c);
        median[j] = mixture_quantile(0.5, &mu_col, &sd_col, &lambda, c);
        hi90[j] = mixture_quantile(0.95, &mu_col, &sd_col, &lambda, c);
        margin[j] = 0.5 * (hi90[j] - lo90[j]);
    }

    Ok(FieldForecast {
        time: future.times[h_idx],
        median,
        lo90,
        hi90,
        margin_of_error: margin,
    })
}

// ---------------------------------------------------------------------------
// Rolling refit schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct OriginResult {
    /// Index into the panel: training used hours [origin - window, origin),
    /// forecasts cover [origin, origin + horizon).
    pub origin: usize,
    pub forecast: ProbabilisticForecast,
    /// Verifying observations, horizon x sites.
    pub actual: DMatrix<f64>,
    pub actual_status: Vec<ObsStatus>,
    /// Raw ensemble mean over the same window, the no-skill baseline.
    pub ensemble_mean: DMatrix<f64>,
}

/// Refit-and-predict at each origin. Origins run in parallel; every origin
/// draws from its own seeded stream, so results do not depend on thread
/// scheduling.
pub fn rolling_calibration(
    config: &ModelConfig,
    observations: &ObservationPanel,
    forecasts: &ForecastPanel,
    network: &StationNetwork,
    origins: &[usize],
    horizon: usize,
    options: &FitOptions,
    seed: u64,
) -> Result<Vec<OriginResult>> {
    let window = config.training_window_hours;
    let t_len = observations.t_len();
    if origins.is_empty() {
        return Err(Error::config("empty origin schedule"));
    }
    for &o in origins {
        if o < window || o + horizon > t_len {
            return Err(Error::config(format!(
                "origin {o} needs {window} hours of history and {horizon} ahead within 0..{t_len}"
            )));
        }
    }

    let mut results: Vec<OriginResult> = origins
        .par_iter()
        .map(|&o| -> Result<OriginResult> {
            let obs_train = observations.window(o - window, o);
            let fc_train = forecasts.window(o - window, o);
            let fc_future = forecasts.window(o, o + horizon);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(o as u64);
            let fitted = fit(config, &obs_train, &fc_train, network, options, &mut rng)?;
            let forecast = predict(&fitted, &fc_future, horizon, &mut rng)?;

            let n = network.len();
            let mut actual = DMatrix::zeros(horizon, n);
            let mut status = Vec::with_capacity(horizon * n);
            for h in 0..horizon {
                for i in 0..n {
                    actual[(h, i)] = observations.values[(o + h, i)];
                    status.push(observations.status(o + h, i));
                }
            }
            let mut ensemble_mean = DMatrix::zeros(horizon, n);
            for h in 0..horizon {
                for i in 0..n {
                    ensemble_mean[(h, i)] = forecasts.ensemble_mean[(o + h, i)];
                }
            }
            Ok(OriginResult {
                origin: o,
                forecast,
                actual,
                actual_status: status,
                ensemble_mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| r.origin);
    Ok(results)
}

// ---------------------------------------------------------------------------
// Archive
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveConfig {
    model: ModelConfig,
    training_start: DateTime<Utc>,
    training_end: DateTime<Utc>,
    censor_threshold: f64,
    station_ids: Vec<String>,
    standardization_means: [f64; 4],
    standardization_sds: [f64; 4],
    n_draws: usize,
    prediction_draws: usize,
    ram_acceptance: f64,
    nan_rejections: usize,
    n_augmented: usize,
    dic: Option<f64>,
    p_d: Option<f64>,
    lpml: Option<f64>,
}

/// Fitted-model archive: config.json, the station table, and one CSV per
/// parameter group (iteration column first). State paths are summarized by
/// their final row plus the end-of-window scale/covariance, which is
/// everything forecasting consumes; `load_archive` reverses the process.
pub fn save_archive(fitted: &FittedModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fit_criteria = match &fitted.likelihoods {
        Some(lik) => {
            let (dic, p_d) = crate::scoring::dic(&lik.per_draw, lik.at_posterior_mean)?;
            let lpml = crate::scoring::lpml(&lik.per_site)?;
            (Some(dic), Some(p_d), Some(lpml))
        }
        None => (None, None, None),
    };
    let cfg = ArchiveConfig {
        model: fitted.config.clone(),
        training_start: fitted.training_span.0,
        training_end: fitted.training_span.1,
        censor_threshold: fitted.censor_threshold,
        station_ids: fitted
            .network
            .stations()
            .iter()
            .map(|s| s.id.clone())
            .collect(),
        standardization_means: fitted.standardization.means,
        standardization_sds: fitted.standardization.sds,
        n_draws: fitted.draws.n_draws(),
        prediction_draws: fitted.prediction_draws,
        ram_acceptance: fitted.diagnostics.ram_acceptance,
        nan_rejections: fitted.diagnostics.nan_rejections,
        n_augmented: fitted.diagnostics.n_augmented,
        dic: fit_criteria.0,
        p_d: fit_criteria.1,
        lpml: fit_criteria.2,
    };
    let cfg_path = dir.join("config.json");
    let file = std::fs::File::create(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    serde_json::to_writer_pretty(file, &cfg)
        .map_err(|e| Error::data(format!("{}: {e}", cfg_path.display())))?;
    crate::ingest::write_stations(&fitted.network, &dir.join("stations.csv"))?;

    let m = fitted.draws.n_draws();
    write_draw_table(&dir.join("lambda.csv"), &["lambda"], m, |d| {
        vec![fitted.draws.lambda[d]]
    })?;
    if !fitted.draws.phi_decay.is_empty() {
        write_draw_table(&dir.join("phi_decay.csv"), &["phi_decay"], m, |d| {
            vec![fitted.draws.phi_decay[d]]
        })?;
    }
    if !fitted.draws.beta.is_empty() {
        write_draw_table(&dir.join("beta.csv"), &["beta0", "beta1"], m, |d| {
            fitted.draws.beta[d].to_vec()
        })?;
    }
    if !fitted.draws.precision_path.is_empty() {
        write_draw_table(&dir.join("precision_end.csv"), &["phi_end"], m, |d| {
            vec![*fitted.draws.precision_path[d].last().unwrap()]
        })?;
    }
    let theta_cols: Vec<String> = (0..STATE_DIM).map(|k| format!("theta{k}")).collect();
    let theta_refs: Vec<&str> = theta_cols.iter().map(|s| s.as_str()).collect();
    write_draw_table(&dir.join("theta_end.csv"), &theta_refs, m, |d| {
        let path = &fitted.draws.theta[d];
        path.row(path.nrows() - 1).iter().cloned().collect()
    })?;
    // End-of-window filter state: scale factors plus the upper triangle of
    // the scale-unit state covariance.
    let mut end_cols = vec!["s_end".to_string(), "n_end".to_string(), "d_end".to_string()];
    for i in 0..STATE_DIM {
        for j in i..STATE_DIM {
            end_cols.push(format!("c_{i}_{j}"));
        }
    }
    let end_refs: Vec<&str> = end_cols.iter().map(|s| s.as_str()).collect();
    write_draw_table(&dir.join("end_state.csv"), &end_refs, m, |d| {
        let e = &fitted.draws.end_state[d];
        let mut row = vec![e.s_end, e.n_end, e.d_end];
        for i in 0..STATE_DIM {
            for j in i..STATE_DIM {
                row.push(e.c_end[(i, j)]);
            }
        }
        row
    })?;

    if let Some(lik) = &fitted.likelihoods {
        let dic_path = dir.join("fit_likelihoods.csv");
        let mut w =
            std::fs::File::create(&dic_path).map_err(|e| Error::io(&dic_path, e))?;
        writeln!(w, "iteration,log_likelihood").map_err(|e| Error::io(&dic_path, e))?;
        for (d, v) in lik.per_draw.iter().enumerate() {
            writeln!(w, "{d},{v:.6}").map_err(|e| Error::io(&dic_path, e))?;
        }
    }
    Ok(())
}

fn write_draw_table<F: Fn(usize) -> Vec<f64>>(
    path: &Path,
    cols: &[&str],
    n_draws: usize,
    row: F,
) -> Result<()> {
    let mut w = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(w, "iteration,{}", cols.join(",")).map_err(|e| Error::io(path, e))?;
    for d in 0..n_draws {
        let vals: Vec<String> = row(d).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{d},{}", vals.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn read_draw_table(path: &Path, expect_cols: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expect_cols + 1 {
            return Err(Error::data(format!(
                "{}:{}: expected {} columns, got {}",
                path.display(),
                k + 1,
                expect_cols + 1,
                fields.len()
            )));
        }
        let mut row = Vec::with_capacity(expect_cols);
        for f in &fields[1..] {
            row.push(f.parse::<f64>().map_err(|_| {
                Error::data(format!("{}:{}: bad value {f:?}", path.display(), k + 1))
            })?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Rebuild a forecasting-ready model from an archive directory. The
/// restored draws carry end states only (a one-row state path), which is
/// sufficient for `predict` and `predict_field`; training-panel
/// likelihood tables are not restored.
pub fn load_archive(dir: &Path) -> Result<FittedModel> {
    let cfg_path = dir.join("config.json");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: ArchiveConfig = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: {e}", cfg_path.display())))?;
    cfg.model.validate()?;
    let stations = crate::ingest::load_stations(&dir.join("stations.csv"))?;
    let ids: Vec<&str> = stations.iter().map(|s| s.id.as_str()).collect();
    if ids != cfg.station_ids.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Err(Error::data(format!(
            "{}: station table does not match config.json",
            dir.display()
        )));
    }
    let network = StationNetwork::build(stations)?;
    let kind = cfg.model.model_kind;
    let m = cfg.n_draws;

    let lambda_rows = read_draw_table(&dir.join("lambda.csv"), 1)?;
    let theta_rows = read_draw_table(&dir.join("theta_end.csv"), STATE_DIM)?;
    let tri = STATE_DIM * (STATE_DIM + 1) / 2;
    let end_rows = read_draw_table(&dir.join("end_state.csv"), 3 + tri)?;
    if lambda_rows.len() != m || theta_rows.len() != m || end_rows.len() != m {
        return Err(Error::data(format!(
            "{}: draw tables disagree with n_draws = {m}",
            dir.display()
        )));
    }
    let phi_decay_rows = if kind.is_spatial() {
        read_draw_table(&dir.join("phi_decay.csv"), 1)?
    } else {
        Vec::new()
    };
    let beta_rows = if kind.has_spread_skill() {
        read_draw_table(&dir.join("beta.csv"), 2)?
    } else {
        Vec::new()
    };
    let precision_rows = if kind.has_spread_skill() {
        Vec::new()
    } else {
        read_draw_table(&dir.join("precision_end.csv"), 1)?
    };

    let mut draws = crate::domain::PosteriorDraws::default();
    for d in 0..m {
        draws.lambda.push(lambda_rows[d][0]);
        draws
            .theta
            .push(DMatrix::from_row_slice(1, STATE_DIM, &theta_rows[d]));
        if kind.is_spatial() {
            draws.phi_decay.push(phi_decay_rows[d][0]);
        }
        if kind.has_spread_skill() {
            draws.beta.push([beta_rows[d][0], beta_rows[d][1]]);
        } else {
            draws.precision_path.push(vec![precision_rows[d][0]]);
        }
        let e = &end_rows[d];
        let mut c_end = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let mut k = 3;
        for i in 0..STATE_DIM {
            for j in i..STATE_DIM {
                c_end[(i, j)] = e[k];
                c_end[(j, i)] = e[k];
                k += 1;
            }
        }
        draws.end_state.push(crate::domain::FilterEndState {
            m_end: DVector::zeros(STATE_DIM),
            c_end,
            s_end: e[0],
            n_end: e[1],
            d_end: e[2],
        });
    }

    Ok(FittedModel {
        config: cfg.model,
        draws,
        diagnostics: SamplerDiagnostics {
            ram_acceptance: cfg.ram_acceptance,
            nan_rejections: cfg.nan_rejections,
            n_augmented: cfg.n_augmented,
        },
        training_span: (cfg.training_start, cfg.training_end),
        network,
        standardization: Standardization {
            means: cfg.standardization_means,
            sds: cfg.standardization_sds,
        },
        censor_threshold: cfg.censor_threshold,
        likelihoods: None,
        prediction_draws: cfg.prediction_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FilterEndState, PosteriorDraws, Station};

    fn tiny_network(n: usize) -> StationNetwork {
        let stations = (0..n)
            .map(|i| Station {
                id: format!("s{i}"),
                latitude: -21.0 + 0.5 * i as f64,
                longitude: -45.0 + 0.3 * i as f64,
                elevation: 300.0 + 40.0 * i as f64,
                roughness_length: Some(0.05 + 0.01 * i as f64),
            })
            .collect();
        StationNetwork::build(stations).unwrap()
    }

    #[test]
    fn mixture_quantiles_are_ordered_and_monotone() {
        let mu = [0.5, 1.0, 1.5];
        let sd = [0.4, 0.5, 0.3];
        let lambda = [0.5, 0.6, 0.4];
        let q05 = mixture_quantile(0.05, &mu, &sd, &lambda, 0.0);
        let q50 = mixture_quantile(0.5, &mu, &sd, &lambda, 0.0);
        let q95 = mixture_quantile(0.95, &mu, &sd, &lambda, 0.0);
        assert!(q05 <= q50 && q50 <= q95);
        // Round trip: the CDF at the quantile returns the probability.
        assert!((mixture_cdf(q50, &mu, &sd, &lambda) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn full_censor_mass_collapses_to_threshold() {
        // Component mass far below the censor threshold's image.
        let mu = [-30.0];
        let sd = [0.5];
        let lambda = [0.5];
        for p in [0.05, 0.5, 0.95] {
            assert_eq!(mixture_quantile(p, &mu, &sd, &lambda, 0.0), 0.0);
        }
    }

    #[test]
    fn identity_lambda_median_is_latent_mean_plus_one() {
        // One component, lambda = 1: y = x + 1, so the median of the
        // mixture is mu + 1.
        let q = mixture_quantile(0.5, &[4.0], &[0.3], &[1.0], 0.0);
        assert!((q - 5.0).abs() < 1e-6, "{q}");
    }

    fn synthetic_fitted(kind: ModelKind, network: &StationNetwork, n_draws: usize) -> FittedModel {
        let mut draws = PosteriorDraws::default();
        for d in 0..n_draws {
            let mut theta = DMatrix::zeros(2, STATE_DIM);
            theta[(1, 0)] = 0.4 + 0.01 * d as f64;
            theta[(1, 1)] = 0.5;
            draws.theta.push(theta);
            draws.lambda.push(0.5);
            draws.precision_path.push(vec![4.0; 2]);
            if kind.is_spatial() {
                draws.phi_decay.push(0.01);
            }
            draws.end_state.push(FilterEndState {
                m_end: DVector::zeros(STATE_DIM),
                c_end: DMatrix::identity(STATE_DIM, STATE_DIM) * 0.01,
                s_end: 0.25,
                n_end: 40.0,
                d_end: 10.0,
            });
        }
        FittedModel {
            config: ModelConfig::new(kind),
            draws,
            diagnostics: SamplerDiagnostics {
                ram_acceptance: 0.23,
                nan_rejections: 0,
                n_augmented: 0,
            },
            training_span: (
                crate::simulate::hourly_times(1)[0],
                crate::simulate::hourly_times(1)[0],
            ),
            network: network.clone(),
            standardization: Standardization::from_network(network),
            censor_threshold: 0.0,
            likelihoods: None,
            prediction_draws: n_draws,
        }
    }

    fn constant_panel(t_len: usize, n: usize, value: f64) -> ForecastPanel {
        let members: Vec<f64> = vec![value; t_len * n * 2];
        ForecastPanel::from_members(crate::simulate::hourly_times(t_len), n, 2, members).unwrap()
    }

    #[test]
    fn predict_respects_censor_floor_and_order() {
        let network = tiny_network(4);
        let fitted = synthetic_fitted(ModelKind::Dgop, &network, 30);
        let future = constant_panel(6, 4, 3.0);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let fc = predict(&fitted, &future, 6, &mut rng).unwrap();
        for h in 0..6 {
            for i in 0..4 {
                assert!(fc.lo90[(h, i)] <= fc.median[(h, i)]);
                assert!(fc.median[(h, i)] <= fc.hi90[(h, i)]);
            }
        }
        for panel in &fc.draws {
            assert!(panel.iter().all(|&y| y >= 0.0));
        }
    }

    #[test]
    fn predict_permutes_with_station_order() {
        // Reversing the station order permutes the deterministic summaries
        // exactly: no hidden coupling across columns.
        let net_a = tiny_network(4);
        let stations_rev: Vec<Station> = net_a.stations().iter().rev().cloned().collect();
        let net_b = StationNetwork::build(stations_rev).unwrap();

        // Distinct fbar per site so design rows differ.
        let t_len = 3;
        let mk_panel = |reversed: bool| {
            let mut members = Vec::new();
            for _t in 0..t_len {
                for i in 0..4 {
                    let site = if reversed { 3 - i } else { i };
                    members.extend([2.0 + site as f64, 2.2 + site as f64]);
                }
            }
            ForecastPanel::from_members(crate::simulate::hourly_times(t_len), 4, 2, members)
                .unwrap()
        };
        // Standardization must agree: use the same network constants.
        let mut fitted_a = synthetic_fitted(ModelKind::Dgop, &net_a, 10);
        let mut fitted_b = synthetic_fitted(ModelKind::Dgop, &net_b, 10);
        let shared = Standardization::from_network(&net_a);
        fitted_a.standardization = shared.clone();
        fitted_b.standardization = shared;

        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let fa = predict(&fitted_a, &mk_panel(false), t_len, &mut rng).unwrap();
        let fb = predict(&fitted_b, &mk_panel(true), t_len, &mut rng).unwrap();
        for h in 0..t_len {
            for i in 0..4 {
                assert!((fa.median[(h, i)] - fb.median[(h, 3 - i)]).abs() < 1e-12);
                assert!((fa.hi90[(h, i)] - fb.hi90[(h, 3 - i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_field_rejects_nonspatial_kinds() {
        let network = tiny_network(4);
        let fitted = synthetic_fitted(ModelKind::Dmos, &network, 5);
        let future = constant_panel(2, 4, 3.0);
        let grid = vec![GridPoint {
            latitude: -21.0,
            longitude: -45.0,
            elevation: 300.0,
            roughness_length: 0.05,
            fbar: 3.0,
            ensemble_var: 0.1,
        }];
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let err = predict_field(&fitted, &grid, &future, 1, &mut rng).unwrap_err();
        assert!(err.to_string().contains("spatial"));
    }

    #[test]
    fn field_margin_nonnegative_and_station_consistent() {
        let network = tiny_network(4);
        let fitted = synthetic_fitted(ModelKind::Dgop, &network, 40);
        let future = constant_panel(2, 4, 3.0);
        let s0 = &network.stations()[0];
        let grid = vec![GridPoint {
            latitude: s0.latitude,
            longitude: s0.longitude,
            elevation: s0.elevation,
            roughness_length: s0.roughness_length.unwrap(),
            fbar: 3.0,
            ensemble_var: 0.0,
        }];
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let field = predict_field(&fitted, &grid, &future, 1, &mut rng).unwrap();
        assert!(field.margin_of_error[0] >= 0.0);
        let station_fc = predict(&fitted, &future, 1, &mut rng).unwrap();
        // Same location, same covariates: medians agree within sampling
        // error of the field draw (the field run samples states).
        assert!(
            (field.median[0] - station_fc.median[(0, 0)]).abs() < 0.5,
            "field {} vs station {}",
            field.median[0],
            station_fc.median[(0, 0)]
        );
    }

    #[test]
    fn archive_round_trip_preserves_predictions() {
        let network = tiny_network(4);
        let fitted = synthetic_fitted(ModelKind::Dgop, &network, 12);
        let dir = tempfile::TempDir::new().unwrap();
        save_archive(&fitted, dir.path()).unwrap();
        let loaded = load_archive(dir.path()).unwrap();
        assert_eq!(loaded.draws.n_draws(), 12);
        let future = constant_panel(3, 4, 3.0);
        let mut r1 = ChaCha20Rng::seed_from_u64(7);
        let mut r2 = ChaCha20Rng::seed_from_u64(7);
        let fa = predict(&fitted, &future, 3, &mut r1).unwrap();
        let fb = predict(&loaded, &future, 3, &mut r2).unwrap();
        assert_eq!(fa.median, fb.median);
        assert_eq!(fa.hi90, fb.hi90);
        assert_eq!(fa.draws[3], fb.draws[3]);
    }

    #[test]
    fn selected_draws_subsamples_evenly() {
        assert_eq!(selected_draws(5, 10), vec![0, 1, 2, 3, 4]);
        let s = selected_draws(100, 10);
        assert_eq!(s.len(), 10);
        assert_eq!(s[0], 0);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!(*s.last().unwrap() >= 90);
    }
}
