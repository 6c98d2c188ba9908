//! Generate a dataset whose generating parameters are known, refit the
//! model, and print posterior intervals next to the truth. This is the
//! single-replicate view of the coverage study in the test suite.
//!
//! Usage: cargo run --release --example parameter_recovery [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stemos::calibrators::{fit, FitOptions};
use stemos::domain::{Discounts, McmcConfig, ModelConfig, ModelKind};
use stemos::linalg::quantile;
use stemos::simulate::generate_recovery_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(11);
    let data =
        generate_recovery_dataset(10, 240, 0.5, None, Discounts::DEFAULT_DYNAMIC, seed)?;
    println!(
        "generated {} stations x {} hours ({:.1}% censored, {:.1}% missing)",
        data.network.len(),
        data.observations.t_len(),
        100.0 * data.truth.censored_fraction,
        100.0 * data.truth.missing_fraction,
    );

    let mut config = ModelConfig::new(ModelKind::Dgop);
    config.training_window_hours = 240;
    config.mcmc = McmcConfig { iterations: 4000, burn_in: 1000, thin: 2, seed: 0 };
    let options =
        FitOptions { compute_fit_likelihoods: false, prediction_draws: 10, ..FitOptions::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1000));
    let fitted = fit(
        &config,
        &data.observations,
        &data.forecasts,
        &data.network,
        &options,
        &mut rng,
    )?;
    println!(
        "retained {} draws, RAM acceptance {:.2}, {} augmented cells\n",
        fitted.draws.n_draws(),
        fitted.diagnostics.ram_acceptance,
        fitted.diagnostics.n_augmented,
    );

    println!("{:<18} {:>8} {:>8} {:>8} {:>8} {:>5}", "parameter", "truth", "q05", "median", "q95", "hit");
    let mut show = |name: &str, truth: f64, draws: &[f64]| {
        let mut v = draws.to_vec();
        v.sort_by(f64::total_cmp);
        let (lo, mid, hi) =
            (quantile(&v, 0.05), quantile(&v, 0.5), quantile(&v, 0.95));
        let hit = lo <= truth && truth <= hi;
        println!(
            "{:<18} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>5}",
            name,
            truth,
            lo,
            mid,
            hi,
            if hit { "yes" } else { "NO" }
        );
    };
    show("power exponent", data.truth.lambda, &fitted.draws.lambda);
    if let Some(decay) = data.truth.phi_decay {
        show("spatial decay /km", decay, &fitted.draws.phi_decay);
    }

    // End-of-window calibration coefficients: intercept and ensemble slope
    // wander around the generating values, so compare the smoothed end
    // state to the truth's static part.
    let t_end = data.observations.t_len();
    let coord = |k: usize| -> Vec<f64> {
        fitted.draws.theta.iter().map(|th| th[(t_end, k)]).collect()
    };
    show("ensemble slope", data.truth.slope, &coord(1));
    Ok(())
}
