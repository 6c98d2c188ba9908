//! Score a rolling forecast run: point accuracy, interval sharpness, rank
//! histogram flatness, and the fit-level information criteria that guide
//! model choice.
//!
//! Usage: cargo run --release --example scoring_report

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stemos::calibrators::{fit, rolling_calibration, FitOptions};
use stemos::domain::{McmcConfig, ModelConfig, ModelKind, ObsStatus};
use stemos::scoring::{self, CaseTable};
use stemos::simulate::{generate_scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec { n_sites: 8, t_len: 336, ..ScenarioSpec::new(2, 9)? };
    let data = generate_scenario(&spec)?;
    let window = 192usize;
    let origins: Vec<usize> = (0..5).map(|k| window + 24 * k).collect();

    let mut config = ModelConfig::new(ModelKind::Dgop);
    config.training_window_hours = window;
    config.mcmc = McmcConfig { iterations: 600, burn_in: 200, thin: 2, seed: 0 };
    let options = FitOptions {
        compute_fit_likelihoods: false,
        prediction_draws: 19,
        ..FitOptions::default()
    };
    let results = rolling_calibration(
        &config,
        &data.observations,
        &data.forecasts,
        &data.network,
        &origins,
        24,
        &options,
        31,
    )?;

    // Flatten every verifying (origin, hour, site) cell into one case table;
    // the carried predictive draws double as rank-histogram members.
    let mut table = CaseTable::default();
    for r in &results {
        let (h_len, n) = r.actual.shape();
        for h in 0..h_len {
            for i in 0..n {
                if r.actual_status[h * n + i] == ObsStatus::Missing {
                    continue;
                }
                let members: Vec<f64> =
                    r.forecast.draws.iter().map(|d| d[(h, i)]).collect();
                table.push(
                    r.forecast.times[h],
                    r.actual[(h, i)],
                    r.forecast.median[(h, i)],
                    r.forecast.lo90[(h, i)],
                    r.forecast.hi90[(h, i)],
                    members,
                );
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let report = table.report(0.1, &mut rng)?;
    println!("rolling evaluation of {} over {} cases:", config.model_kind, report.cases);
    println!("  MAE               {:>8.3} m/s", report.mae);
    println!("  RMSE              {:>8.3} m/s", report.rmse);
    println!("  agreement index   {:>8.3}", report.d);
    println!("  interval score    {:>8.3} (90% level)", report.interval_score);
    let (amp, phase) = report.rmse_decomposition;
    println!(
        "  error split       {:>7.1}% amplitude, {:>5.1}% timing",
        100.0 * amp / (report.rmse * report.rmse),
        100.0 * phase / (report.rmse * report.rmse)
    );
    let total: usize = report.rank_histogram.iter().sum();
    let k = report.rank_histogram.len();
    println!("\nrank histogram ({k} bins, {total} cases; flat = calibrated):");
    let expected = total as f64 / k as f64;
    for (b, count) in report.rank_histogram.iter().enumerate() {
        let bar = "#".repeat((40.0 * *count as f64 / (2.0 * expected)).round() as usize);
        println!("  {:>2} {:>5} {}", b + 1, count, bar);
    }
    let p = scoring::chi_square_uniformity(&report.rank_histogram)?;
    println!("  chi-square flatness p = {p:.3}");

    // Fit-level criteria on the final training window (they need the
    // per-draw likelihood tables, so run one dedicated fit).
    let opts_lik = FitOptions { compute_fit_likelihoods: true, ..options };
    let mut rng = ChaCha20Rng::seed_from_u64(32);
    let fitted = fit(
        &config,
        &data.observations,
        &data.forecasts,
        &data.network,
        &opts_lik,
        &mut rng,
    )?;
    if let Some(lik) = &fitted.likelihoods {
        let (dic, p_d) = scoring::dic(&lik.per_draw, lik.at_posterior_mean)?;
        let lpml = scoring::lpml(&lik.per_site)?;
        println!("\nfinal-window fit criteria: DIC {dic:.1} (p_D {p_d:.1}), LPML {lpml:.3}");
    }
    Ok(())
}
