//! Exponential spatial correlation, covariance assembly for the spatial
//! model kinds, and kriging to unobserved sites.

use nalgebra::{DMatrix, DVector};

use crate::domain::StationNetwork;
use crate::error::Result;
use crate::linalg;

/// Decay rate (1/km) giving correlation 0.05 at the stated practical range.
pub fn phi_for_practical_range(range_km: f64) -> f64 {
    assert!(range_km > 0.0);
    -(0.05f64.ln()) / range_km
}

/// Exponential correlation matrix H over the network's station distances:
/// H_ij = exp(-phi d_ij), unit diagonal.
pub fn correlation_matrix(network: &StationNetwork, phi: f64) -> DMatrix<f64> {
    correlation_from_distances(network.distances_km(), phi)
}

pub fn correlation_from_distances(d_km: &DMatrix<f64>, phi: f64) -> DMatrix<f64> {
    assert!(phi > 0.0, "decay rate must be > 0, got {phi}");
    d_km.map(|d| (-phi * d).exp())
}

/// Spread-skill scale coefficients sigma^2_i = beta0 + beta1 S^2_i.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpreadSkill {
    pub beta0: f64,
    pub beta1: f64,
}

impl SpreadSkill {
    pub fn new(beta0: f64, beta1: f64) -> Self {
        assert!(
            beta0 >= 0.0 && beta1 >= 0.0,
            "spread-skill coefficients must be non-negative"
        );
        SpreadSkill { beta0, beta1 }
    }

    /// Per-site error variances beta0 + beta1 S^2_i.
    pub fn variances(&self, ensemble_var_row: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            ensemble_var_row.len(),
            ensemble_var_row.iter().map(|s2| {
                assert!(*s2 >= 0.0, "negative ensemble variance {s2}");
                self.beta0 + self.beta1 * s2
            }),
        )
    }

    /// Diagonal of D_t: per-site scale sqrt(beta0 + beta1 S^2_i).
    pub fn scale_diag(&self, ensemble_var_row: &[f64]) -> DVector<f64> {
        self.variances(ensemble_var_row).map(f64::sqrt)
    }
}

/// Sigma = sigma^2 H.
pub fn covariance_scalar(sigma2: f64, h: &DMatrix<f64>) -> DMatrix<f64> {
    h * sigma2
}

/// Sigma* = D H D built from the per-site variances v_i = beta0 + beta1
/// S^2_i, i.e. entries sqrt(v_i v_j) H_ij. Working from variances keeps the
/// beta1 = 0 case exactly equal to the scalar assembly.
pub fn covariance_spread(variances: &DVector<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = variances.len();
    DMatrix::from_fn(n, n, |i, j| (variances[i] * variances[j]).sqrt() * h[(i, j)])
}

/// Conditional Gaussian of the latent residual field at target sites given
/// the station residuals at one time point:
///
///   mean = H0' H^-1 eps,   cov = sigma^2 (H00 - H0' H^-1 H0),
///
/// where H0 is the station-to-target correlation block and H00 the
/// target-to-target block. Sites are given in the network's projected plane
/// (see `StationNetwork::project_km`). A target coinciding with a station
/// reproduces that residual with zero variance.
pub fn krige_latent(
    network: &StationNetwork,
    target_xy: &[(f64, f64)],
    phi: f64,
    sigma2: f64,
    residuals: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (h0, h00) = correlation_blocks(network, target_xy, phi);
    let h = correlation_matrix(network, phi);
    let chol = linalg::cholesky_with_jitter(&h, "kriging correlation")?;
    let hinv_h0 = chol.solve(&h0);
    let mean = hinv_h0.transpose() * residuals;
    let mut cov = (&h00 - h0.transpose() * &hinv_h0) * sigma2;
    // Clamp the tiny negative diagonal left by cancellation at coincident
    // sites.
    for i in 0..cov.nrows() {
        if cov[(i, i)] < 0.0 {
            cov[(i, i)] = 0.0;
        }
    }
    Ok((mean, cov))
}

/// Marginal-only kriging for large target sets (grids): returns per-target
/// conditional mean and variance, skipping the target-target cross terms.
pub fn krige_marginals(
    network: &StationNetwork,
    target_xy: &[(f64, f64)],
    phi: f64,
    sigma2: f64,
    residuals: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (h0, _) = correlation_blocks(network, target_xy, phi);
    let h = correlation_matrix(network, phi);
    let chol = linalg::cholesky_with_jitter(&h, "kriging correlation")?;
    let hinv_h0 = chol.solve(&h0);
    let mean = hinv_h0.transpose() * residuals;
    let n0 = target_xy.len();
    let mut var = DVector::zeros(n0);
    for j in 0..n0 {
        let reduction = h0.column(j).dot(&hinv_h0.column(j));
        var[j] = (sigma2 * (1.0 - reduction)).max(0.0);
    }
    Ok((mean, var))
}

fn correlation_blocks(
    network: &StationNetwork,
    target_xy: &[(f64, f64)],
    phi: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let station_xy: Vec<(f64, f64)> = network
        .stations()
        .iter()
        .map(|s| network.project_km(s.latitude, s.longitude))
        .collect();
    let n = station_xy.len();
    let n0 = target_xy.len();
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let h0 = DMatrix::from_fn(n, n0, |i, j| (-phi * dist(station_xy[i], target_xy[j])).exp());
    let h00 = DMatrix::from_fn(n0, n0, |i, j| (-phi * dist(target_xy[i], target_xy[j])).exp());
    (h0, h00)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Station;
    use approx::assert_relative_eq;

    fn grid_network(n_side: usize, spacing_deg: f64) -> StationNetwork {
        let mut stations = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                stations.push(Station {
                    id: format!("s{i}_{j}"),
                    latitude: -20.0 + i as f64 * spacing_deg,
                    longitude: -45.0 + j as f64 * spacing_deg,
                    elevation: 100.0,
                    roughness_length: Some(0.05),
                });
            }
        }
        StationNetwork::build(stations).unwrap()
    }

    #[test]
    fn correlation_basic_shape() {
        let net = grid_network(2, 0.5);
        let h = correlation_matrix(&net, 0.01);
        for i in 0..4 {
            assert_eq!(h[(i, i)], 1.0);
            for j in 0..4 {
                assert!(h[(i, j)] > 0.0 && h[(i, j)] <= 1.0);
                assert_eq!(h[(i, j)], h[(j, i)]);
            }
        }
        // Practical range: correlation 0.05 at half the maximum distance.
        let range = net.max_distance_km() / 2.0;
        let phi = phi_for_practical_range(range);
        let d = net.distances_km();
        let idx = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .max_by(|a, b| d[*a].partial_cmp(&d[*b]).unwrap())
            .unwrap();
        assert_relative_eq!((-phi * d[idx] / 2.0).exp(), 0.05, epsilon = 1e-12);
        // Huge decay rate: identity.
        let h_far = correlation_matrix(&net, 1e6);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(h_far[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spread_skill_diag() {
        let d = SpreadSkill::new(1.0, 0.0).scale_diag(&[3.0, 9.0]);
        assert_eq!(d.as_slice(), &[1.0, 1.0]);
        let d = SpreadSkill::new(0.0, 1.0).scale_diag(&[4.0, 9.0]);
        assert_eq!(d.as_slice(), &[2.0, 3.0]);
        let d = SpreadSkill::new(0.5, 2.0).scale_diag(&[1.0]);
        assert_relative_eq!(d[0], 2.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn covariance_assembly() {
        let net = grid_network(2, 0.5);
        let h = correlation_matrix(&net, 0.01);
        let gop = covariance_scalar(2.0, &h);
        assert_relative_eq!(gop[(0, 0)], 2.0, epsilon = 1e-12);
        // Spread-skill with beta1 = 0 equals the scalar assembly with
        // sigma^2 = beta0, exactly.
        let v = SpreadSkill::new(2.0, 0.0).variances(&[7.0, 1.0, 3.0, 2.0]);
        let sem = covariance_spread(&v, &h);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(sem[(i, j)], gop[(i, j)]);
            }
        }
        // DGOP scaling: phi_t = 4 divides correlation entries by 4.
        let dgop = covariance_scalar(1.0 / 4.0, &h);
        assert_relative_eq!(dgop[(0, 1)], h[(0, 1)] / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn kriging_exact_at_station_and_vague_far_away() {
        let net = grid_network(2, 0.5);
        let eps = DVector::from_vec(vec![0.3, -0.2, 0.8, 0.1]);
        let phi = 0.01;
        let s0 = net.stations()[2].clone();
        let at_station = net.project_km(s0.latitude, s0.longitude);
        let far = (5e4, 5e4);
        let (mean, cov) =
            krige_latent(&net, &[at_station, far], phi, 1.7, &eps).unwrap();
        assert_relative_eq!(mean[0], eps[2], epsilon = 1e-9);
        assert!(cov[(0, 0)].abs() < 1e-9);
        assert_relative_eq!(mean[1], 0.0, epsilon = 1e-9);
        assert_relative_eq!(cov[(1, 1)], 1.7, epsilon = 1e-9);
        // Marginal variant agrees on means and variances.
        let (m2, v2) = krige_marginals(&net, &[at_station, far], phi, 1.7, &eps).unwrap();
        assert_relative_eq!(m2[0], mean[0], epsilon = 1e-12);
        assert_relative_eq!(v2[1], cov[(1, 1)], epsilon = 1e-12);
    }
}
