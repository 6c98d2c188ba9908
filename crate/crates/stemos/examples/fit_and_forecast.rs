//! Fit the spatiotemporal model on the first ten days of a simulated
//! record, forecast the next 24 hours, and print the forecast intervals
//! next to what actually happened.
//!
//! Usage: cargo run --release --example fit_and_forecast

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stemos::calibrators::{fit, predict, FitOptions};
use stemos::domain::{
    ForecastPanel, McmcConfig, ModelConfig, ModelKind, ObsStatus, ObservationPanel,
};
use stemos::simulate::{generate_scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec { n_sites: 8, t_len: 264, ..ScenarioSpec::new(2, 7)? };
    let data = generate_scenario(&spec)?;
    let train_len = 240usize;
    let horizon = 24usize;

    // Split the panels: hours [0, 240) train, [240, 264) verify.
    let obs = &data.observations;
    let fc = &data.forecasts;
    let n = spec.n_sites;
    let train_obs = ObservationPanel::new(
        obs.times[..train_len].to_vec(),
        obs.values.rows(0, train_len).into_owned(),
        (0..train_len)
            .flat_map(|t| (0..n).map(move |i| (t, i)))
            .map(|(t, i)| obs.status(t, i))
            .collect(),
        obs.censor_threshold,
    )?;
    let members_of = |range: std::ops::Range<usize>| -> Vec<f64> {
        let mut out = Vec::new();
        for t in range {
            for i in 0..n {
                for j in 0..fc.n_members() {
                    out.push(fc.member(t, i, j));
                }
            }
        }
        out
    };
    let train_fc = ForecastPanel::from_members(
        fc.times[..train_len].to_vec(),
        n,
        fc.n_members(),
        members_of(0..train_len),
    )?;
    let future_fc = ForecastPanel::from_members(
        fc.times[train_len..].to_vec(),
        n,
        fc.n_members(),
        members_of(train_len..spec.t_len),
    )?;

    let mut config = ModelConfig::new(ModelKind::Stemos);
    config.training_window_hours = 192;
    config.mcmc = McmcConfig { iterations: 1500, burn_in: 500, thin: 2, seed: 0 };
    let options = FitOptions { prediction_draws: 120, ..FitOptions::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let fitted = fit(&config, &train_obs, &train_fc, &data.network, &options, &mut rng)?;
    println!(
        "fitted {} on {} -> {} ({} retained draws, RAM acceptance {:.2})",
        config.model_kind,
        fitted.training_span.0,
        fitted.training_span.1,
        fitted.draws.n_draws(),
        fitted.diagnostics.ram_acceptance,
    );
    let lam = mean(&fitted.draws.lambda);
    let dec = mean(&fitted.draws.phi_decay);
    println!("posterior means: exponent {lam:.3}, spatial decay {dec:.4} /km");
    if let Some(lik) = &fitted.likelihoods {
        let (dic, p_d) = stemos::scoring::dic(&lik.per_draw, lik.at_posterior_mean)?;
        let lpml = stemos::scoring::lpml(&lik.per_site)?;
        println!("fit criteria: DIC {dic:.1} (p_D {p_d:.1}), LPML {lpml:.3}");
    }

    let forecast = predict(&fitted, &future_fc, horizon, &mut rng)?;
    let station = 0usize;
    println!(
        "\n24-hour forecast for station {} from {}:",
        forecast.station_ids[station], forecast.origin
    );
    println!("{:>4} {:>8} {:>8} {:>8} {:>8} {:>7}", "h", "lo90", "median", "hi90", "actual", "hit");
    let mut hits = 0usize;
    let mut scored = 0usize;
    let (h_len, _) = forecast.median.shape();
    for h in 0..h_len {
        let t = train_len + h;
        let status = obs.status(t, station);
        let actual = obs.values[(t, station)];
        let lo = forecast.lo90[(h, station)];
        let hi = forecast.hi90[(h, station)];
        let (a_str, hit_str) = match status {
            ObsStatus::Missing => ("-".to_string(), "-".to_string()),
            _ => {
                scored += 1;
                let hit = lo <= actual && actual <= hi;
                hits += hit as usize;
                (format!("{actual:.2}"), if hit { "yes".into() } else { "NO".into() })
            }
        };
        println!(
            "{:>4} {:>8.2} {:>8.2} {:>8.2} {:>8} {:>7}",
            h + 1,
            lo,
            forecast.median[(h, station)],
            hi,
            a_str,
            hit_str
        );
    }
    println!("\n90% intervals covered {hits}/{scored} verifying hours at this station");
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
