//! Dense linear algebra helpers shared by the filter, sampler and kriging
//! code. Everything here works on `nalgebra` dynamic matrices; sizes are
//! small (state dimension 8, tens of stations) so no BLAS is needed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Symmetrize in place: `a <- (a + a') / 2`. Filter recursions accumulate
/// tiny asymmetries that Cholesky is sensitive to.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Cholesky factorization that retries with an escalating diagonal jitter
/// proportional to the mean diagonal. Covariance matrices produced by
/// discounted recursions can be semidefinite to working precision.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, label: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch);
    }
    let n = a.nrows();
    let scale = a.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n.max(1) as f64;
    let base = if scale > 0.0 { scale } else { 1.0 };
    let mut jitter = base * 1e-12;
    for _ in 0..12 {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(b) {
            return Ok(ch);
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(format!(
        "{label}: matrix not positive definite even after jitter {jitter:.3e}"
    )))
}

/// Draw `mean + L z` with `z` standard normal and `L` a lower Cholesky
/// factor.
pub fn sample_mvn_chol<R: Rng>(
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
    rng: &mut R,
) -> DVector<f64> {
    let n = mean.len();
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    mean + chol.l() * z
}

/// Draw from N(mean, cov) where `cov` is only positive *semi*definite, as
/// happens for smoothing covariances when a discount factor is exactly one.
/// Uses a symmetric eigendecomposition and clamps negative eigenvalues to
/// zero, so a degenerate direction is reproduced exactly.
pub fn sample_mvn_psd<R: Rng>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mut sym = cov.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let n = mean.len();
    let mut out = mean.clone();
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0);
        if lam > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            let s = lam.sqrt() * z;
            out.axpy(s, &eig.eigenvectors.column(k).into_owned(), 1.0);
        }
    }
    out
}

/// Log density of N(mean, cov) at `x`, with `chol` the factorization of
/// `cov`.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = x.len() as f64;
    let l = chol.l_dirty();
    let mut logdet = 0.0;
    for i in 0..x.len() {
        logdet += l[(i, i)].ln();
    }
    let diff = x - mean;
    let w = chol.l().solve_lower_triangular(&diff).expect("solve");
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - logdet - 0.5 * w.norm_squared()
}

/// Pairwise summation: deterministic and far more accurate than a running
/// sum for the long score reductions.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Arithmetic mean via pairwise summation. Returns NaN for empty input.
pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Empirical quantile with linear interpolation between order statistics
/// (the common "type 7" rule). `q` in [0, 1].
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty slice");
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = h - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jittered_cholesky_recovers_semidefinite() {
        // Rank-1 PSD matrix: plain Cholesky fails, jittered succeeds.
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let ch = cholesky_with_jitter(&a, "rank1").unwrap();
        let back = ch.l() * ch.l().transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(back[(i, j)], a[(i, j)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn mvn_logpdf_matches_univariate() {
        let x = DVector::from_vec(vec![1.3]);
        let mean = DVector::from_vec(vec![0.5]);
        let cov = DMatrix::from_vec(1, 1, vec![4.0]);
        let ch = Cholesky::new(cov).unwrap();
        let got = mvn_logpdf(&x, &mean, &ch);
        let sigma2: f64 = 4.0;
        let want = -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
            - 0.5 * (1.3f64 - 0.5).powi(2) / sigma2;
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile(&xs, 0.0), 1.0);
        assert_relative_eq!(quantile(&xs, 1.0), 4.0);
        assert_relative_eq!(quantile(&xs, 0.5), 2.5);
    }
}
