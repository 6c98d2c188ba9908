//! Sampling engines: robust adaptive Metropolis for the static parameters
//! (spatial decay, Box-Cox exponent, spread-skill coefficients), single-site
//! Gibbs augmentation of censored and missing cells, truncated-normal
//! draws, the per-model Gibbs scan, and the R-hat convergence diagnostic.
//!
//! One Gibbs scan runs: (1) augment flagged latent cells given the current
//! state path and covariances, (2) a RAM move of the static parameters
//! conditional on the state/precision paths with the augmented latents held
//! fixed (a proposal that pushes the censor bound below an augmented value
//! is rejected outright), (3) a fresh FFBS draw of the state and precision
//! paths under the possibly-updated parameters, and (4) cache refresh. Step
//! (3) last keeps every recorded snapshot's state path coherent with its
//! static parameters, which the forecasting stage relies on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{
    Discounts, FilterEndState, ForecastPanel, ModelKind, ObsStatus, ObservationPanel,
    PosteriorDraws, PriorConfig, StationNetwork, STATE_DIM,
};
use crate::dlm::{self, NoiseModel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::spatial::{self, SpreadSkill};
use crate::transform;

// ---------------------------------------------------------------------------
// Truncated normal sampling
// ---------------------------------------------------------------------------

/// Exact draw from N(mean, sd^2) restricted to x <= upper. Inverse-CDF in
/// the body, exponential-proposal rejection once the bound sits more than 4
/// sd into the lower tail.
pub fn truncated_normal_upper<R: Rng>(mean: f64, sd: f64, upper: f64, rng: &mut R) -> f64 {
    assert!(sd > 0.0, "truncated normal needs sd > 0");
    if upper.is_infinite() && upper > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        return mean + sd * z;
    }
    let alpha = (upper - mean) / sd;
    let z = if alpha >= -4.0 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let p_bound = n.cdf(alpha);
        let u: f64 = Open01.sample(rng);
        let p = (u * p_bound).max(f64::MIN_POSITIVE);
        n.inverse_cdf(p)
    } else {
        -robert_tail(-alpha, rng)
    };
    mean + sd * z.min(alpha)
}

/// Exact draw from N(mean, sd^2) restricted to x >= lower.
pub fn truncated_normal_lower<R: Rng>(mean: f64, sd: f64, lower: f64, rng: &mut R) -> f64 {
    -truncated_normal_upper(-mean, sd, -lower, rng)
}

/// Exact draw from N(mean, sd^2) restricted to lo <= x <= hi.
pub fn truncated_normal_two_sided<R: Rng>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    assert!(lo <= hi, "crossed truncation bounds");
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    if a > 0.0 {
        // Mirror so the interval's near edge faces the mode.
        return -truncated_normal_two_sided(-mean, sd, -hi, -lo, rng) + 0.0;
    }
    let z = if b <= -4.0 {
        // Entire interval deep in the lower tail: rejection from the
        // one-sided tail sampler.
        loop {
            let w = -robert_tail(-b, rng);
            if w >= a {
                break w;
            }
        }
    } else {
        let n = Normal::new(0.0, 1.0).unwrap();
        let pa = n.cdf(a);
        let pb = n.cdf(b);
        if pb - pa < 1e-300 {
            0.5 * (a + b)
        } else {
            let u: f64 = Open01.sample(rng);
            n.inverse_cdf(pa + u * (pb - pa))
        }
    };
    mean + sd * z.clamp(a, b)
}

/// Standard-normal upper tail Z | Z > a for a >= 0, by exponential
/// rejection (Robert 1995).
fn robert_tail<R: Rng>(a: f64, rng: &mut R) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let w = a + e / lambda;
        let d = w - lambda;
        let u: f64 = rng.random();
        if u <= (-0.5 * d * d).exp() {
            return w;
        }
    }
}

// ---------------------------------------------------------------------------
// Robust adaptive Metropolis
// ---------------------------------------------------------------------------

/// Proposal state for the robust adaptive Metropolis sampler: a
/// lower-triangular factor S adapted by rank-one updates toward a target
/// acceptance rate.
#[derive(Debug, Clone)]
pub struct RamState {
    s: DMatrix<f64>,
    pub target_acceptance: f64,
    pub gamma_exponent: f64,
    iterations: usize,
    accepted: usize,
    pub nan_rejections: usize,
}

impl RamState {
    pub fn new(dim: usize, initial_scale: f64) -> Self {
        RamState {
            s: DMatrix::identity(dim, dim) * initial_scale,
            target_acceptance: 0.234,
            gamma_exponent: 0.66,
            iterations: 0,
            accepted: 0,
            nan_rejections: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn proposal_factor(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iterations as f64
        }
    }

    /// Draw a proposal direction u and the proposal point current + S u.
    pub fn propose<R: Rng>(&self, current: &DVector<f64>, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let u = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let prop = current + &self.s * &u;
        (u, prop)
    }

    /// Metropolis acceptance probability for a log-target difference; NaN
    /// targets count as rejections and are flagged.
    pub fn acceptance_probability(&mut self, delta_log_target: f64) -> f64 {
        if delta_log_target.is_nan() {
            self.nan_rejections += 1;
            return 0.0;
        }
        delta_log_target.exp().min(1.0)
    }

    /// Rank-one shape adaptation: S S' <- S (I + eta (alpha - alpha*) u u' /
    /// |u|^2) S'. The multiplier's smallest eigenvalue is 1 - eta*alpha* > 0,
    /// so the refactorization cannot lose positive definiteness.
    pub fn adapt(&mut self, u: &DVector<f64>, alpha: f64, accepted: bool) {
        self.iterations += 1;
        if accepted {
            self.accepted += 1;
        }
        let eta = (self.iterations as f64).powf(-self.gamma_exponent);
        let norm2 = u.norm_squared();
        if norm2 == 0.0 {
            return;
        }
        let d = self.dim();
        let mut middle = DMatrix::identity(d, d);
        let coef = eta * (alpha - self.target_acceptance) / norm2;
        for i in 0..d {
            for j in 0..d {
                middle[(i, j)] += coef * u[i] * u[j];
            }
        }
        let mut a = &self.s * middle * self.s.transpose();
        linalg::symmetrize(&mut a);
        match linalg::cholesky_with_jitter(&a, "RAM adaptation") {
            Ok(ch) => self.s = ch.l(),
            Err(_) => { /* keep the previous factor */ }
        }
    }

    /// One full Metropolis step with adaptation against a closure target.
    pub fn step<R: Rng, F: FnMut(&DVector<f64>) -> f64>(
        &mut self,
        current: &mut DVector<f64>,
        current_log_target: &mut f64,
        mut log_target: F,
        rng: &mut R,
    ) -> bool {
        let (u, prop) = self.propose(current, rng);
        let lt = log_target(&prop);
        let alpha = self.acceptance_probability(lt - *current_log_target);
        let accepted = alpha > 0.0 && rng.random::<f64>() < alpha;
        if accepted {
            *current = prop;
            *current_log_target = lt;
        }
        self.adapt(&u, alpha, accepted);
        accepted
    }
}

// ---------------------------------------------------------------------------
// Latent-cell augmentation
// ---------------------------------------------------------------------------

/// Per-time scaling of the error covariance Sigma_t = scale * H * scale.
pub enum PrecisionScaling<'a> {
    /// Sigma_t = H / phi_t: scalar precision path (phi_1..phi_T order,
    /// indexed by t).
    Scalar(&'a [f64]),
    /// Sigma_t = D_t H D_t: per-cell scale diagonals, T x n.
    Diagonal(&'a DMatrix<f64>),
}

/// One ascending-index sweep over the flagged cells, drawing each latent
/// from its univariate full conditional given every other site at the same
/// hour: variance 1/Omega_ii and mean mu_i - (1/Omega_ii) sum_{j != i}
/// Omega_ij (x_j - mu_j) with Omega the precision matrix of Sigma_t.
/// Censored cells truncate above at `c_bar`.
#[allow(clippy::too_many_arguments)]
pub fn augment_latents<R: Rng>(
    x: &mut DMatrix<f64>,
    cells: &[(usize, usize, bool)],
    mean_field: &DMatrix<f64>,
    h_inv: &DMatrix<f64>,
    scaling: &PrecisionScaling,
    c_bar: f64,
    rng: &mut R,
) {
    let n = x.ncols();
    for &(t, i, censored) in cells {
        // Conditional moments from the precision matrix Omega_t. The
        // scalar precision cancels out of the mean; the diagonal scaling
        // enters as d_i/d_j.
        let mut cross = 0.0;
        match scaling {
            PrecisionScaling::Scalar(_) => {
                for j in 0..n {
                    if j != i {
                        cross += h_inv[(i, j)] * (x[(t, j)] - mean_field[(t, j)]);
                    }
                }
            }
            PrecisionScaling::Diagonal(d) => {
                for j in 0..n {
                    if j != i {
                        cross += h_inv[(i, j)] * (d[(t, i)] / d[(t, j)])
                            * (x[(t, j)] - mean_field[(t, j)]);
                    }
                }
            }
        }
        let mean = mean_field[(t, i)] - cross / h_inv[(i, i)];
        let var = match scaling {
            PrecisionScaling::Scalar(phi) => 1.0 / (phi[t] * h_inv[(i, i)]),
            PrecisionScaling::Diagonal(d) => d[(t, i)] * d[(t, i)] / h_inv[(i, i)],
        };
        let sd = var.sqrt();
        x[(t, i)] = if censored {
            truncated_normal_upper(mean, sd, c_bar, rng)
        } else {
            mean + sd * {
                let z: f64 = StandardNormal.sample(rng);
                z
            }
        };
        debug_assert!(!censored || x[(t, i)] <= c_bar);
    }
}

// ---------------------------------------------------------------------------
// Gibbs sampler for one model fit
// ---------------------------------------------------------------------------

/// Pins for nesting and oracle tests: a pinned parameter is excluded from
/// the RAM move and held at the given value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pins {
    pub lambda: Option<f64>,
    pub phi_decay: Option<f64>,
    pub beta: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct SamplerDiagnostics {
    pub ram_acceptance: f64,
    pub nan_rejections: usize,
    pub n_augmented: usize,
}

/// Which static parameters the RAM move cycles over, in vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RamCoord {
    LogPhiDecay,
    Lambda,
    LogBeta0,
    LogBeta1,
}

pub struct Sampler {
    kind: ModelKind,
    obs: ObservationPanel,
    designs: Vec<DMatrix<f64>>,
    s2: DMatrix<f64>,
    distances: DMatrix<f64>,
    g: DMatrix<f64>,
    discounts: Discounts,
    priors: PriorConfig,
    phi_rate: f64,
    sum_log_y: f64,
    cells: Vec<(usize, usize, bool)>,

    // Chain state.
    lambda: f64,
    phi_decay: f64,
    beta: [f64; 2],
    x: DMatrix<f64>,
    theta: DMatrix<f64>,
    precision: Vec<f64>,
    h: DMatrix<f64>,
    h_inv: DMatrix<f64>,
    mean_field: DMatrix<f64>,
    end_state: FilterEndState,
    ram: Option<RamState>,
    coords: Vec<RamCoord>,
}

impl Sampler {
    pub fn new(
        kind: ModelKind,
        obs: &ObservationPanel,
        panel: &ForecastPanel,
        network: &StationNetwork,
        designs: Vec<DMatrix<f64>>,
        g: DMatrix<f64>,
        discounts: Discounts,
        priors: PriorConfig,
        pins: Pins,
    ) -> Result<Self> {
        let t_len = obs.t_len();
        let n = obs.n_sites();
        if panel.t_len() != t_len || panel.n_sites() != n {
            return Err(Error::data("observation and forecast panels misaligned"));
        }
        if t_len == 0 {
            return Err(Error::data("empty training window"));
        }
        if obs.count(ObsStatus::Observed) == 0 {
            return Err(Error::data("training window has no uncensored observation"));
        }

        let mut cells = Vec::new();
        for t in 0..t_len {
            for i in 0..n {
                match obs.status(t, i) {
                    ObsStatus::CensoredAtC => cells.push((t, i, true)),
                    ObsStatus::Missing => cells.push((t, i, false)),
                    ObsStatus::Observed => {}
                }
            }
        }

        let phi_rate = priors.phi_rate_for(network.max_distance_km());
        let lambda = pins.lambda.unwrap_or(priors.lambda_mean);
        // Start the decay at its prior mode (the practical-range value).
        let phi_decay = pins
            .phi_decay
            .unwrap_or((priors.phi_shape - 1.0).max(0.5) / phi_rate);
        let beta = pins.beta.unwrap_or([0.5, 0.5]);

        let mut coords = Vec::new();
        if kind.is_spatial() && pins.phi_decay.is_none() {
            coords.push(RamCoord::LogPhiDecay);
        }
        if pins.lambda.is_none() {
            coords.push(RamCoord::Lambda);
        }
        if kind.has_spread_skill() && pins.beta.is_none() {
            coords.push(RamCoord::LogBeta0);
            coords.push(RamCoord::LogBeta1);
        }
        let ram = if coords.is_empty() {
            None
        } else {
            Some(RamState::new(coords.len(), 0.1))
        };

        let h = if kind.is_spatial() {
            spatial::correlation_from_distances(network.distances_km(), phi_decay)
        } else {
            DMatrix::identity(n, n)
        };
        let h_inv = linalg::cholesky_with_jitter(&h, "correlation")?.inverse();

        let c = obs.censor_threshold;
        let c_bar = transform::censored_threshold(c, lambda);
        let mut x = DMatrix::zeros(t_len, n);
        for t in 0..t_len {
            for i in 0..n {
                x[(t, i)] = match obs.status(t, i) {
                    ObsStatus::Observed => transform::box_cox(obs.values[(t, i)], lambda),
                    ObsStatus::CensoredAtC => {
                        if c_bar.is_finite() {
                            c_bar - 0.5
                        } else {
                            transform::box_cox(0.1, lambda)
                        }
                    }
                    ObsStatus::Missing => {
                        transform::box_cox(panel.ensemble_mean[(t, i)].max(0.1), lambda)
                    }
                }
            }
        }

        let mut sampler = Sampler {
            kind,
            obs: obs.clone(),
            designs,
            s2: panel.ensemble_var.clone(),
            distances: network.distances_km().clone(),
            g,
            discounts,
            priors,
            phi_rate,
            sum_log_y: transform::sum_log_uncensored(obs),
            cells,
            lambda,
            phi_decay,
            beta,
            x,
            theta: DMatrix::zeros(t_len + 1, STATE_DIM),
            precision: vec![1.0; t_len + 1],
            h,
            h_inv,
            mean_field: DMatrix::zeros(t_len, n),
            end_state: FilterEndState {
                m_end: DVector::zeros(STATE_DIM),
                c_end: DMatrix::identity(STATE_DIM, STATE_DIM),
                s_end: 1.0,
                n_end: 1.0,
                d_end: 1.0,
            },
            ram,
            coords,
        };
        // Initialize the state path with one FFBS pass so the first scan's
        // augmentation and RAM move condition on a real draw.
        struct InitRng(rand_chacha::ChaCha20Rng);
        let mut init_rng = {
            use rand::SeedableRng;
            InitRng(rand_chacha::ChaCha20Rng::seed_from_u64(0x5eed))
        };
        sampler.ffbs(&mut init_rng.0)?;
        sampler.refresh_mean_field();
        Ok(sampler)
    }

    pub fn n_augmented(&self) -> usize {
        self.cells.len()
    }

    fn t_len(&self) -> usize {
        self.obs.t_len()
    }

    fn n_sites(&self) -> usize {
        self.obs.n_sites()
    }

    fn unknown_precision(&self) -> bool {
        !self.kind.has_spread_skill()
    }

    fn c_bar(&self, lambda: f64) -> f64 {
        transform::censored_threshold(self.obs.censor_threshold, lambda)
    }

    /// Scale diagonals D_t for the spread-skill kinds (T x n).
    fn scale_diag(&self, beta: [f64; 2]) -> DMatrix<f64> {
        let ss = SpreadSkill::new(beta[0], beta[1]);
        let (t_len, n) = self.s2.shape();
        let mut d = DMatrix::zeros(t_len, n);
        for t in 0..t_len {
            for i in 0..n {
                d[(t, i)] = (ss.beta0 + ss.beta1 * self.s2[(t, i)]).sqrt();
            }
        }
        d
    }

    fn refresh_mean_field(&mut self) {
        for t in 0..self.t_len() {
            let th = self.theta.row(t + 1).transpose();
            let mu = &self.designs[t] * th;
            for i in 0..self.n_sites() {
                self.mean_field[(t, i)] = mu[i];
            }
        }
    }

    fn augment<R: Rng>(&mut self, rng: &mut R) {
        if self.cells.is_empty() {
            return;
        }
        let c_bar = self.c_bar(self.lambda);
        let scale_store;
        let scaling = if self.unknown_precision() {
            PrecisionScaling::Scalar(&self.precision[1..])
        } else {
            scale_store = self.scale_diag(self.beta);
            PrecisionScaling::Diagonal(&scale_store)
        };
        augment_latents(
            &mut self.x,
            &self.cells,
            &self.mean_field,
            &self.h_inv,
            &scaling,
            c_bar,
            rng,
        );
    }

    fn params_vec(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.coords.len(),
            self.coords.iter().map(|c| match c {
                RamCoord::LogPhiDecay => self.phi_decay.ln(),
                RamCoord::Lambda => self.lambda,
                RamCoord::LogBeta0 => self.beta[0].ln(),
                RamCoord::LogBeta1 => self.beta[1].ln(),
            }),
        )
    }

    fn decode(&self, v: &DVector<f64>) -> (f64, f64, [f64; 2]) {
        let mut lambda = self.lambda;
        let mut phi = self.phi_decay;
        let mut beta = self.beta;
        for (k, c) in self.coords.iter().enumerate() {
            match c {
                RamCoord::LogPhiDecay => phi = v[k].exp(),
                RamCoord::Lambda => lambda = v[k],
                RamCoord::LogBeta0 => beta[0] = v[k].exp(),
                RamCoord::LogBeta1 => beta[1] = v[k].exp(),
            }
        }
        (lambda, phi, beta)
    }

    /// Log posterior density of the static parameters conditional on the
    /// current state/precision paths and augmented latents: the Gaussian
    /// error likelihood, the Box-Cox data Jacobian over uncensored cells,
    /// the priors, and the change-of-variable terms for log-scale
    /// coordinates. Returns -inf for proposals whose censor bound falls
    /// below an augmented censored latent.
    fn log_target(&self, v: &DVector<f64>) -> f64 {
        let (lambda, phi_decay, beta) = self.decode(v);
        let c_bar = self.c_bar(lambda);
        for &(t, i, censored) in &self.cells {
            if censored && self.x[(t, i)] > c_bar {
                return f64::NEG_INFINITY;
            }
        }

        // Residual panel under the proposed lambda: observed cells
        // re-transformed, augmented cells fixed.
        let mut resid = self.x.clone();
        for t in 0..self.t_len() {
            for i in 0..self.n_sites() {
                if self.obs.status(t, i) == ObsStatus::Observed {
                    resid[(t, i)] = transform::box_cox(self.obs.values[(t, i)], lambda);
                }
            }
        }
        for t in 0..self.t_len() {
            for i in 0..self.n_sites() {
                resid[(t, i)] -= self.mean_field[(t, i)];
            }
        }

        let n = self.n_sites() as f64;
        let h = if self.kind.is_spatial() {
            spatial::correlation_from_distances(&self.distances, phi_decay)
        } else {
            DMatrix::identity(self.n_sites(), self.n_sites())
        };
        let chol = match linalg::cholesky_with_jitter(&h, "RAM correlation") {
            Ok(c) => c,
            Err(_) => return f64::NEG_INFINITY,
        };
        let logdet_h_half: f64 = {
            let l = chol.l_dirty();
            (0..self.n_sites()).map(|i| l[(i, i)].ln()).sum()
        };

        let mut loglik = 0.0;
        if self.unknown_precision() {
            for t in 0..self.t_len() {
                let e = resid.row(t).transpose();
                let w = match chol.l().solve_lower_triangular(&e) {
                    Some(w) => w,
                    None => return f64::NEG_INFINITY,
                };
                let phi_t = self.precision[t + 1];
                loglik += -0.5 * n * (2.0 * std::f64::consts::PI).ln() + 0.5 * n * phi_t.ln()
                    - logdet_h_half
                    - 0.5 * phi_t * w.norm_squared();
            }
        } else {
            let d = self.scale_diag(beta);
            for t in 0..self.t_len() {
                let mut logdet_d = 0.0;
                let e = DVector::from_fn(self.n_sites(), |i, _| {
                    logdet_d += d[(t, i)].ln();
                    resid[(t, i)] / d[(t, i)]
                });
                let w = match chol.l().solve_lower_triangular(&e) {
                    Some(w) => w,
                    None => return f64::NEG_INFINITY,
                };
                loglik += -0.5 * n * (2.0 * std::f64::consts::PI).ln()
                    - logdet_d
                    - logdet_h_half
                    - 0.5 * w.norm_squared();
            }
        }

        loglik += transform::jacobian_log_term(lambda, self.sum_log_y);

        // Priors and log-coordinate Jacobians.
        let mut logp = 0.0;
        for (k, c) in self.coords.iter().enumerate() {
            match c {
                RamCoord::LogPhiDecay => {
                    logp += (self.priors.phi_shape - 1.0) * phi_decay.ln()
                        - self.phi_rate * phi_decay
                        + v[k]; // Jacobian of phi = exp(v)
                }
                RamCoord::Lambda => {
                    let dl = lambda - self.priors.lambda_mean;
                    logp += -0.5 * dl * dl / self.priors.lambda_var;
                }
                RamCoord::LogBeta0 | RamCoord::LogBeta1 => {
                    let b = v[k].exp();
                    logp += -0.5 * b * b / self.priors.beta_var + v[k];
                }
            }
        }

        loglik + logp
    }

    fn ram_update<R: Rng>(&mut self, rng: &mut R) {
        let Some(mut ram) = self.ram.take() else {
            return;
        };
        let current = self.params_vec();
        let current_lt = self.log_target(&current);
        let (u, prop) = ram.propose(&current, rng);
        let prop_lt = self.log_target(&prop);
        let alpha = ram.acceptance_probability(prop_lt - current_lt);
        let accepted = alpha > 0.0 && rng.random::<f64>() < alpha;
        if accepted {
            let (lambda, phi_decay, beta) = self.decode(&prop);
            let lambda_changed = lambda != self.lambda;
            let phi_changed = phi_decay != self.phi_decay;
            self.lambda = lambda;
            self.phi_decay = phi_decay;
            self.beta = beta;
            if lambda_changed {
                for t in 0..self.t_len() {
                    for i in 0..self.n_sites() {
                        if self.obs.status(t, i) == ObsStatus::Observed {
                            self.x[(t, i)] =
                                transform::box_cox(self.obs.values[(t, i)], lambda);
                        }
                    }
                }
            }
            if phi_changed && self.kind.is_spatial() {
                self.h = spatial::correlation_from_distances(&self.distances, phi_decay);
                if let Ok(ch) = linalg::cholesky_with_jitter(&self.h, "correlation") {
                    self.h_inv = ch.inverse();
                }
            }
        }
        ram.adapt(&u, alpha, accepted);
        self.ram = Some(ram);
    }

    fn ffbs<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        let m0 = DVector::zeros(STATE_DIM);
        let c0 = DMatrix::identity(STATE_DIM, STATE_DIM) * self.priors.theta_scale;
        let scale_store;
        let noise = if self.unknown_precision() {
            NoiseModel::UnknownPrecision {
                h: &self.h,
                n0: self.priors.n0,
                d0: self.priors.d0,
            }
        } else {
            scale_store = self.scale_diag(self.beta);
            NoiseModel::KnownCovariance {
                h: &self.h,
                scale_diag: &scale_store,
            }
        };
        let filter = dlm::forward_filter(
            &self.x,
            &self.designs,
            &self.g,
            &self.discounts,
            &m0,
            &c0,
            &noise,
            None,
        )?;
        let draw = dlm::backward_sample(&filter, &self.g, rng)?;
        let end = filter.end();
        self.end_state = FilterEndState {
            m_end: end.m.clone(),
            c_end: end.c_mat.clone(),
            s_end: end.s,
            n_end: end.n,
            d_end: end.d,
        };
        self.theta = draw.theta;
        self.precision = draw.precision;
        Ok(())
    }

    /// One full Gibbs scan.
    pub fn scan<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        self.augment(rng);
        self.ram_update(rng);
        self.ffbs(rng)?;
        self.refresh_mean_field();
        Ok(())
    }

    fn snapshot(&self, draws: &mut PosteriorDraws) {
        draws.theta.push(self.theta.clone());
        if self.unknown_precision() {
            draws.precision_path.push(self.precision.clone());
        }
        if self.kind.has_spread_skill() {
            draws.beta.push(self.beta);
        }
        if self.kind.is_spatial() {
            draws.phi_decay.push(self.phi_decay);
        }
        draws.lambda.push(self.lambda);
        draws
            .latent_x
            .push(self.cells.iter().map(|&(t, i, _)| self.x[(t, i)]).collect());
        draws.end_state.push(self.end_state.clone());
    }

    /// Run the chain: `iterations` scans, recording every `thin`-th draw
    /// after `burn_in`.
    pub fn run<R: Rng>(
        &mut self,
        iterations: usize,
        burn_in: usize,
        thin: usize,
        rng: &mut R,
    ) -> Result<(PosteriorDraws, SamplerDiagnostics)> {
        let mut draws = PosteriorDraws {
            augmented_cells: self.cells.iter().map(|&(t, i, _)| (t, i)).collect(),
            ..PosteriorDraws::default()
        };
        for it in 0..iterations {
            self.scan(rng)?;
            if it >= burn_in && (it - burn_in) % thin == 0 {
                self.snapshot(&mut draws);
            }
        }
        let diag = SamplerDiagnostics {
            ram_acceptance: self.ram.as_ref().map_or(f64::NAN, |r| r.acceptance_rate()),
            nan_rejections: self.ram.as_ref().map_or(0, |r| r.nan_rejections),
            n_augmented: self.cells.len(),
        };
        Ok((draws, diag))
    }
}

// ---------------------------------------------------------------------------
// Convergence diagnostic
// ---------------------------------------------------------------------------

/// Gelman-Rubin potential scale reduction factor over k >= 2 equal-length
/// chains of one scalar parameter. Identical chains return exactly 1.
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    assert!(chains.len() >= 2, "rhat needs at least 2 chains");
    let len = chains[0].len();
    assert!(
        chains.iter().all(|c| c.len() == len) && len >= 2,
        "rhat needs equal-length chains of length >= 2"
    );
    let k = chains.len() as f64;
    let n = len as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| linalg::mean(c)).collect();
    let grand = linalg::mean(&chain_means);
    let b_over_n = chain_means
        .iter()
        .map(|m| (m - grand) * (m - grand))
        .sum::<f64>()
        / (k - 1.0);
    let w = chains
        .iter()
        .zip(&chain_means)
        .map(|(c, m)| c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / k;
    if b_over_n == 0.0 {
        return 1.0;
    }
    if w == 0.0 {
        return f64::INFINITY;
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}
