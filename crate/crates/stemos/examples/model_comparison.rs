//! Compare all six calibration models on one synthetic benchmark scenario
//! with a rolling refit-and-predict schedule, and print an MAE/RMSE table
//! against the raw ensemble baseline.
//!
//! Usage: cargo run --release --example model_comparison [scenario] [seed]
//! where scenario is 1 (static world), 2 (modulated diurnal amplitude) or
//! 3 (unbiased ensemble, modulation only).

use stemos::calibrators::{rolling_calibration, FitOptions};
use stemos::domain::{McmcConfig, ModelConfig, ModelKind, ObsStatus};
use stemos::scoring;
use stemos::simulate::{generate_scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let scenario: u8 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);

    let spec = ScenarioSpec {
        n_sites: 10,
        t_len: 504,
        ..ScenarioSpec::new(scenario, seed)?
    };
    let data = generate_scenario(&spec)?;
    println!(
        "scenario {scenario}, seed {seed}: {} stations x {} hours, {:.1}% censored",
        spec.n_sites,
        spec.t_len,
        100.0 * data.truth.censored_fraction
    );

    let window = 240usize;
    let origins: Vec<usize> = (0..10).map(|k| window + 24 * k).collect();
    let options = FitOptions {
        prediction_draws: 150,
        compute_fit_likelihoods: false,
        ..FitOptions::default()
    };

    println!("{:<8} {:>8} {:>8} {:>10}", "model", "MAE", "RMSE", "vs ens MAE");
    let kinds = [
        ModelKind::Mos,
        ModelKind::Gop,
        ModelKind::Semos,
        ModelKind::Dmos,
        ModelKind::Dgop,
        ModelKind::Stemos,
    ];
    let mut ens_mae = f64::NAN;
    for kind in kinds {
        let mut config = ModelConfig::new(kind);
        config.training_window_hours = window;
        config.mcmc = McmcConfig { iterations: 4000, burn_in: 900, thin: 2, seed: 0 };
        let results = rolling_calibration(
            &config,
            &data.observations,
            &data.forecasts,
            &data.network,
            &origins,
            24,
            &options,
            seed,
        )?;

        let mut actual = Vec::new();
        let mut median = Vec::new();
        let mut ensemble = Vec::new();
        for r in &results {
            let (h_len, n) = r.actual.shape();
            for h in 0..h_len {
                for i in 0..n {
                    if r.actual_status[h * n + i] == ObsStatus::Missing {
                        continue;
                    }
                    actual.push(r.actual[(h, i)]);
                    median.push(r.forecast.median[(h, i)]);
                    ensemble.push(r.ensemble_mean[(h, i)]);
                }
            }
        }
        let (mae, rmse) = scoring::mae_rmse(&actual, &median)?;
        let (baseline, _) = scoring::mae_rmse(&actual, &ensemble)?;
        ens_mae = baseline;
        println!("{:<8} {:>8.3} {:>8.3} {:>9.0}%", kind.to_string(), mae, rmse, 100.0 * mae / baseline);
    }
    println!("{:<8} {:>8.3}", "ensemble", ens_mae);
    Ok(())
}
