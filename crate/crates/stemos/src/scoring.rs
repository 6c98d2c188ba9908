//! Forecast verification and model comparison: MAE/RMSE, Willmott's index
//! of agreement, interval score, DIC, LPML, verification rank histograms,
//! and the bias/amplitude/phase decomposition of RMSE.
//!
//! Every aggregation sorts its terms and sums pairwise, so scores are
//! bit-identical under any reordering of the cases and any parallel
//! assembly of the term lists.

use std::path::Path;

use chrono::{DateTime, Utc};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::domain::Season;
use crate::error::{Error, Result};

/// Order-independent sum: sort by total order, then reduce pairwise.
fn stable_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    pairwise(&terms)
}

fn pairwise(terms: &[f64]) -> f64 {
    match terms.len() {
        0 => 0.0,
        1..=32 => terms.iter().sum(),
        n => pairwise(&terms[..n / 2]) + pairwise(&terms[n / 2..]),
    }
}

fn check_pairs(actuals: &[f64], forecasts: &[f64]) -> Result<()> {
    if actuals.is_empty() {
        return Err(Error::data("no scored cases"));
    }
    if actuals.len() != forecasts.len() {
        return Err(Error::data(format!(
            "{} actuals vs {} forecasts",
            actuals.len(),
            forecasts.len()
        )));
    }
    if actuals.iter().chain(forecasts).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite value in scored series"));
    }
    Ok(())
}

pub fn mae_rmse(actuals: &[f64], forecasts: &[f64]) -> Result<(f64, f64)> {
    check_pairs(actuals, forecasts)?;
    let n = actuals.len() as f64;
    let abs: Vec<f64> = actuals
        .iter()
        .zip(forecasts)
        .map(|(y, f)| (f - y).abs())
        .collect();
    let sq: Vec<f64> = abs.iter().map(|e| e * e).collect();
    Ok((stable_sum(abs) / n, (stable_sum(sq) / n).sqrt()))
}

/// Willmott's index: 1 - sum (y - f)^2 / sum (|f - mean| + |y - mean|)^2,
/// the mean taken over the actuals. 1 is perfect agreement; a climatology
/// forecast (f = mean) scores 0.
pub fn index_of_agreement(actuals: &[f64], forecasts: &[f64]) -> Result<f64> {
    check_pairs(actuals, forecasts)?;
    let n = actuals.len() as f64;
    let ybar = stable_sum(actuals.to_vec()) / n;
    let num: Vec<f64> = actuals
        .iter()
        .zip(forecasts)
        .map(|(y, f)| (y - f) * (y - f))
        .collect();
    let den: Vec<f64> = actuals
        .iter()
        .zip(forecasts)
        .map(|(y, f)| {
            let v = (f - ybar).abs() + (y - ybar).abs();
            v * v
        })
        .collect();
    let den_sum = stable_sum(den);
    if den_sum <= 0.0 {
        return Err(Error::data(
            "index of agreement undefined: all values equal the mean",
        ));
    }
    Ok(1.0 - stable_sum(num) / den_sum)
}

/// Mean interval score at level alpha: covered cases pay only the interval
/// width; misses pay 2/alpha per unit of exceedance. Values exactly on a
/// bound count as covered.
pub fn interval_score(actuals: &[f64], lo: &[f64], hi: &[f64], alpha: f64) -> Result<f64> {
    check_pairs(actuals, lo)?;
    check_pairs(actuals, hi)?;
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::config(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut terms = Vec::with_capacity(actuals.len());
    for ((&y, &l), &h) in actuals.iter().zip(lo).zip(hi) {
        if l > h {
            return Err(Error::data(format!("crossed interval [{l}, {h}]")));
        }
        let mut s = h - l;
        if y < l {
            s += 2.0 / alpha * (l - y);
        } else if y > h {
            s += 2.0 / alpha * (y - h);
        }
        terms.push(s);
    }
    let n = actuals.len() as f64;
    Ok(stable_sum(terms) / n)
}

/// Deviance information criterion from the draw-wise panel log-likelihoods
/// and the log-likelihood at the posterior-mean plug-in. Returns (dic, p_d).
pub fn dic(log_likelihood_per_draw: &[f64], log_likelihood_at_bayes_estimate: f64) -> Result<(f64, f64)> {
    if log_likelihood_per_draw.len() < 2 {
        return Err(Error::data("dic needs at least two draws"));
    }
    if log_likelihood_per_draw
        .iter()
        .chain(std::iter::once(&log_likelihood_at_bayes_estimate))
        .any(|v| !v.is_finite())
    {
        return Err(Error::numerical("non-finite log-likelihood in dic input"));
    }
    let m = log_likelihood_per_draw.len() as f64;
    let mean_ll = stable_sum(log_likelihood_per_draw.to_vec()) / m;
    let p_d = 2.0 * (log_likelihood_at_bayes_estimate - mean_ll);
    let dic = -2.0 * mean_ll + p_d;
    Ok((dic, p_d))
}

/// Log pseudo-marginal likelihood: per site, the conditional predictive
/// ordinate is the harmonic mean of the draw-wise likelihoods, evaluated in
/// log space; the score averages log CPO over sites. Input is draws x sites
/// of log-likelihood values.
pub fn lpml(per_site_log_likelihoods: &DMatrix<f64>) -> Result<f64> {
    let (m, n) = per_site_log_likelihoods.shape();
    if m < 2 || n == 0 {
        return Err(Error::data("lpml needs >= 2 draws and >= 1 site"));
    }
    if per_site_log_likelihoods.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite log-likelihood in lpml input"));
    }
    let mut site_terms = Vec::with_capacity(n);
    for i in 0..n {
        // log CPO_i = -logsumexp_m(-ll_mi) + log M
        let neg: Vec<f64> = (0..m).map(|d| -per_site_log_likelihoods[(d, i)]).collect();
        let max = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp_terms: Vec<f64> = neg.iter().map(|v| (v - max).exp()).collect();
        let lse = max + stable_sum(exp_terms).ln();
        site_terms.push((m as f64).ln() - lse);
    }
    Ok(stable_sum(site_terms) / n as f64)
}

/// Verification rank histogram: the rank of each actual among its k
/// predictive members, ties broken uniformly at random. k + 1 bins.
pub fn rank_histogram<R: Rng>(
    actuals: &[f64],
    predictive_members: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let (cases, k) = predictive_members.shape();
    if k < 1 {
        return Err(Error::data("rank histogram needs at least one member"));
    }
    if cases != actuals.len() {
        return Err(Error::data(format!(
            "{} actuals vs {cases} member rows",
            actuals.len()
        )));
    }
    let mut counts = vec![0usize; k + 1];
    for (c, &y) in actuals.iter().enumerate() {
        let mut below = 0usize;
        let mut tied = 0usize;
        for j in 0..k {
            let v = predictive_members[(c, j)];
            if v < y {
                below += 1;
            } else if v == y {
                tied += 1;
            }
        }
        let rank = below + rng.random_range(0..=tied);
        counts[rank] += 1;
    }
    Ok(counts)
}

/// Chi-square goodness-of-fit p-value against the uniform histogram.
pub fn chi_square_uniformity(counts: &[usize]) -> Result<f64> {
    let bins = counts.len();
    if bins < 2 {
        return Err(Error::data("need at least two bins"));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::data("empty histogram"));
    }
    let expected = total as f64 / bins as f64;
    let x2: f64 = counts
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((bins - 1) as f64)
        .map_err(|e| Error::numerical(format!("chi-square setup: {e}")))?;
    Ok(1.0 - dist.cdf(x2))
}

/// Split squared error into its additive parts using population moments:
/// MSE = BIAS^2 + (sd_f - sd_y)^2 + 2 sd_f sd_y (1 - r). The first two terms
/// form the amplitude component (level and variability mismatch), the last
/// is the phase component (timing mismatch). Components sum to rmse^2.
pub fn rmse_decomposition(actuals: &[f64], forecasts: &[f64]) -> Result<(f64, f64)> {
    check_pairs(actuals, forecasts)?;
    let n = actuals.len();
    if n < 2 {
        return Err(Error::data("decomposition needs at least two cases"));
    }
    let nf = n as f64;
    let ybar = stable_sum(actuals.to_vec()) / nf;
    let fbar = stable_sum(forecasts.to_vec()) / nf;
    let var_y = stable_sum(actuals.iter().map(|y| (y - ybar) * (y - ybar)).collect()) / nf;
    let var_f = stable_sum(forecasts.iter().map(|f| (f - fbar) * (f - fbar)).collect()) / nf;
    if var_y <= 0.0 || var_f <= 0.0 {
        return Err(Error::data("decomposition undefined for a constant series"));
    }
    let cov = stable_sum(
        actuals
            .iter()
            .zip(forecasts)
            .map(|(y, f)| (y - ybar) * (f - fbar))
            .collect(),
    ) / nf;
    let (sd_y, sd_f) = (var_y.sqrt(), var_f.sqrt());
    let r = cov / (sd_y * sd_f);
    let bias = fbar - ybar;
    let amplitude = bias * bias + (sd_f - sd_y) * (sd_f - sd_y);
    let phase = 2.0 * sd_f * sd_y * (1.0 - r);
    Ok((amplitude, phase))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One scored slice of cases: deterministic summaries plus any fit-level
/// criteria that apply to the whole slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub cases: usize,
    pub mae: f64,
    pub rmse: f64,
    pub d: f64,
    pub interval_score: f64,
    /// (dic, p_d); fit-level, absent for rolling point-forecast scoring.
    pub dic: Option<(f64, f64)>,
    pub lpml: Option<f64>,
    pub rank_histogram: Vec<usize>,
    /// (amplitude, phase), summing to rmse^2.
    pub rmse_decomposition: (f64, f64),
}

impl ScoreReport {
    /// Component shares of rmse^2, when the error is not identically zero.
    pub fn decomposition_shares(&self) -> Option<(f64, f64)> {
        let total = self.rmse * self.rmse;
        if total > 0.0 {
            Some((
                self.rmse_decomposition.0 / total,
                self.rmse_decomposition.1 / total,
            ))
        } else {
            None
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

/// Flat table of verification cases, optionally with predictive members for
/// the rank histogram, tagged by valid time for seasonal slicing.
#[derive(Debug, Clone, Default)]
pub struct CaseTable {
    pub times: Vec<DateTime<Utc>>,
    pub actuals: Vec<f64>,
    pub forecasts: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// One row of k member values per case, flattened.
    pub members: Vec<Vec<f64>>,
}

impl CaseTable {
    pub fn push(
        &mut self,
        time: DateTime<Utc>,
        actual: f64,
        forecast: f64,
        lo: f64,
        hi: f64,
        members: Vec<f64>,
    ) {
        self.times.push(time);
        self.actuals.push(actual);
        self.forecasts.push(forecast);
        self.lo.push(lo);
        self.hi.push(hi);
        self.members.push(members);
    }

    pub fn len(&self) -> usize {
        self.actuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actuals.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> CaseTable {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect();
        CaseTable {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            actuals: pick(&self.actuals),
            forecasts: pick(&self.forecasts),
            lo: pick(&self.lo),
            hi: pick(&self.hi),
            members: idx.iter().map(|&i| self.members[i].clone()).collect(),
        }
    }

    /// Score the whole table at interval level alpha.
    pub fn report<R: Rng>(&self, alpha: f64, rng: &mut R) -> Result<ScoreReport> {
        let (mae, rmse) = mae_rmse(&self.actuals, &self.forecasts)?;
        let d = index_of_agreement(&self.actuals, &self.forecasts)?;
        let is = interval_score(&self.actuals, &self.lo, &self.hi, alpha)?;
        let decomposition = rmse_decomposition(&self.actuals, &self.forecasts)?;
        let hist = if self.members.iter().all(|m| !m.is_empty()) && !self.members.is_empty() {
            let k = self.members[0].len();
            if self.members.iter().any(|m| m.len() != k) {
                return Err(Error::data("ragged member rows in case table"));
            }
            let mat = DMatrix::from_fn(self.len(), k, |c, j| self.members[c][j]);
            rank_histogram(&self.actuals, &mat, rng)?
        } else {
            Vec::new()
        };
        Ok(ScoreReport {
            cases: self.len(),
            mae,
            rmse,
            d,
            interval_score: is,
            dic: None,
            lpml: None,
            rank_histogram: hist,
            rmse_decomposition: decomposition,
        })
    }

    /// Overall plus per-season reports, labelled. Seasons with too few
    /// cases to score are skipped.
    pub fn seasonal_reports<R: Rng>(
        &self,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Vec<(String, ScoreReport)>> {
        let mut out = vec![("overall".to_string(), self.report(alpha, rng)?)];
        for season in [Season::Summer, Season::Fall, Season::Winter, Season::Spring] {
            let idx: Vec<usize> = (0..self.len())
                .filter(|&i| Season::from_time(self.times[i]) == season)
                .collect();
            if idx.len() < 2 {
                continue;
            }
            match self.subset(&idx).report(alpha, rng) {
                Ok(rep) => out.push((season.name().to_string(), rep)),
                Err(Error::Data(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

/// Breakdown CSV: one row per labelled slice.
pub fn write_reports_csv(path: &Path, rows: &[(String, ScoreReport)]) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(
        w,
        "slice,cases,mae,rmse,d,interval_score,amplitude,phase,amplitude_share,phase_share"
    )
    .map_err(|e| Error::io(path, e))?;
    for (label, rep) in rows {
        let shares = rep.decomposition_shares();
        let share_str = match shares {
            Some((a, p)) => format!("{a:.6},{p:.6}"),
            None => ",".to_string(),
        };
        writeln!(
            w,
            "{label},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{share_str}",
            rep.cases,
            rep.mae,
            rep.rmse,
            rep.d,
            rep.interval_score,
            rep.rmse_decomposition.0,
            rep.rmse_decomposition.1,
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn mae_rmse_hand_values() {
        assert_eq!(mae_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        let (mae, rmse) = mae_rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((mae, rmse), (1.0, 1.0));
        let (mae, rmse) = mae_rmse(&[0.0, 0.0], &[0.0, 2.0]).unwrap();
        assert!((mae - 1.0).abs() < 1e-15);
        assert!((rmse - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn agreement_index_anchors() {
        let y = [1.0, 3.0, 2.0, 4.0];
        assert!((index_of_agreement(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        // Climatology forecast scores zero.
        let mean = [2.5; 4];
        assert!((index_of_agreement(&y, &mean).unwrap()).abs() < 1e-15);
        let d = index_of_agreement(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert!(d.abs() < 1e-15);
        assert!(index_of_agreement(&[2.0, 2.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn interval_score_boundary_and_miss() {
        // On-boundary actual pays only the width.
        let is = interval_score(&[2.0], &[1.0], &[2.0], 0.1).unwrap();
        assert!((is - 1.0).abs() < 1e-15);
        // Miss by 0.5 above with width 1 at alpha 0.1: 1 + 20 * 0.5 = 11.
        let is = interval_score(&[2.5], &[1.0], &[2.0], 0.1).unwrap();
        assert!((is - 11.0).abs() < 1e-12);
        assert!(interval_score(&[0.0], &[1.0], &[0.5], 0.1).is_err());
    }

    #[test]
    fn dic_degenerate_posterior_has_zero_complexity() {
        let ll = [-10.0, -10.0, -10.0];
        let (dic, p_d) = dic(&ll, -10.0).unwrap();
        assert!(p_d.abs() < 1e-12);
        assert!((dic - 20.0).abs() < 1e-12);
    }

    #[test]
    fn lpml_matches_harmonic_mean() {
        // Likelihoods 1 and 1/3: harmonic mean 0.5.
        let per_site = DMatrix::from_row_slice(2, 1, &[0.0, (1.0f64 / 3.0).ln()]);
        let v = lpml(&per_site).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-12, "{v}");
        // Constant likelihood: CPO equals it exactly.
        let per_site = DMatrix::from_element(5, 3, -2.5);
        assert!((lpml(&per_site).unwrap() + 2.5).abs() < 1e-12);
    }

    #[test]
    fn rank_histogram_extremes_and_total() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let members = DMatrix::from_element(50, 9, 1.0);
        let actuals = vec![0.0; 50];
        let counts = rank_histogram(&actuals, &members, &mut rng).unwrap();
        assert_eq!(counts[0], 50);
        assert_eq!(counts.iter().sum::<usize>(), 50);
        assert_eq!(counts.len(), 10);
        // All-tied case spreads across bins rather than collapsing.
        let counts = rank_histogram(&vec![1.0; 2000], &DMatrix::from_element(2000, 9, 1.0), &mut rng)
            .unwrap();
        assert!(counts.iter().all(|&c| c > 100), "{counts:?}");
    }

    #[test]
    fn chi_square_detects_skew_not_uniform() {
        let uniform = vec![100; 10];
        assert!(chi_square_uniformity(&uniform).unwrap() > 0.99);
        let mut skewed = vec![100; 10];
        skewed[0] = 400;
        assert!(chi_square_uniformity(&skewed).unwrap() < 1e-6);
    }

    #[test]
    fn decomposition_level_shift_is_pure_amplitude() {
        let y: Vec<f64> = (0..200).map(|t| (t as f64 * 0.3).sin()).collect();
        let f: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
        let (amp, phase) = rmse_decomposition(&y, &f).unwrap();
        assert!((amp - 1.0).abs() < 1e-12);
        assert!(phase.abs() < 1e-12);
    }

    #[test]
    fn decomposition_time_shift_is_pure_phase() {
        let n = 480;
        let w = 2.0 * std::f64::consts::PI / 24.0;
        let y: Vec<f64> = (0..n).map(|t| (w * t as f64).sin()).collect();
        let f: Vec<f64> = (0..n).map(|t| (w * (t as f64 + 3.0)).sin()).collect();
        let (amp, phase) = rmse_decomposition(&y, &f).unwrap();
        assert!(amp < 1e-8, "amplitude {amp}");
        assert!(phase > 0.1);
        // Components reassemble the squared error.
        let (_, rmse) = mae_rmse(&y, &f).unwrap();
        assert!((amp + phase - rmse * rmse).abs() < 1e-9);
    }

    #[test]
    fn scores_are_order_invariant_bitwise() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let n = 500;
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let f: Vec<f64> = y.iter().map(|v| v + rng.random::<f64>() - 0.5).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        // A fixed shuffle.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let fp: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
        assert_eq!(mae_rmse(&y, &f).unwrap(), mae_rmse(&yp, &fp).unwrap());
        assert_eq!(
            index_of_agreement(&y, &f).unwrap(),
            index_of_agreement(&yp, &fp).unwrap()
        );
        assert_eq!(
            rmse_decomposition(&y, &f).unwrap(),
            rmse_decomposition(&yp, &fp).unwrap()
        );
    }

    #[test]
    fn interval_score_is_minimized_by_true_quantiles() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..20000).map(|_| dist.sample(&mut rng)).collect();
        // Candidate symmetric intervals around 0; the 90% one (z = 1.645)
        // should win.
        let mut best = (f64::INFINITY, 0.0);
        for z in [1.0, 1.3, 1.645, 2.0, 2.6] {
            let lo = vec![-z; y.len()];
            let hi = vec![z; y.len()];
            let s = interval_score(&y, &lo, &hi, 0.1).unwrap();
            if s < best.0 {
                best = (s, z);
            }
        }
        assert_eq!(best.1, 1.645, "propriety check picked z = {}", best.1);
    }

    #[test]
    fn seasonal_breakdown_covers_overall_and_labels() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let times = crate::simulate::hourly_times(24 * 400);
        let mut table = CaseTable::default();
        for (t, time) in times.iter().enumerate() {
            let y = 5.0 + (t as f64 * 0.26).sin();
            table.push(*time, y, y + 0.3, y - 1.0, y + 1.0, vec![y, y + 0.5, y - 0.5]);
        }
        let rows = table.seasonal_reports(0.1, &mut rng).unwrap();
        assert_eq!(rows[0].0, "overall");
        assert_eq!(rows.len(), 5, "400 days span all four seasons");
        let total: usize = rows[1..].iter().map(|(_, r)| r.cases).sum();
        assert_eq!(total, rows[0].1.cases);
        for (_, rep) in &rows {
            assert!(rep.mae <= rep.rmse + 1e-12);
            assert_eq!(rep.rank_histogram.iter().sum::<usize>(), rep.cases);
        }
    }
}
