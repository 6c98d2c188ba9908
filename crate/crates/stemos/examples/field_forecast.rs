//! Forecast wind speed at points with no station: fit the spatial model on
//! station data, then interpolate the calibrated forecast onto a small
//! lat/lon grid for one future hour and print it as a text map.
//!
//! Usage: cargo run --release --example field_forecast

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stemos::calibrators::{fit, predict_field, FitOptions, GridPoint};
use stemos::domain::{ForecastPanel, McmcConfig, ModelConfig, ModelKind};
use stemos::simulate::{generate_scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec { n_sites: 9, t_len: 240, ..ScenarioSpec::new(2, 3)? };
    let data = generate_scenario(&spec)?;
    let train_len = 216usize;
    let n = spec.n_sites;
    let fc = &data.forecasts;

    let mut config = ModelConfig::new(ModelKind::Dgop);
    config.training_window_hours = 192;
    config.mcmc = McmcConfig { iterations: 1200, burn_in: 400, thin: 2, seed: 0 };
    let options = FitOptions {
        prediction_draws: 150,
        compute_fit_likelihoods: false,
        ..FitOptions::default()
    };

    // Train on everything before the target day.
    let obs = &data.observations;
    let train_obs = stemos::domain::ObservationPanel::new(
        obs.times[..train_len].to_vec(),
        obs.values.rows(0, train_len).into_owned(),
        (0..train_len)
            .flat_map(|t| (0..n).map(move |i| obs.status(t, i)))
            .collect(),
        obs.censor_threshold,
    )?;
    let mut train_members = Vec::new();
    let mut future_members = Vec::new();
    for t in 0..spec.t_len {
        for i in 0..n {
            for j in 0..fc.n_members() {
                let v = fc.member(t, i, j);
                if t < train_len {
                    train_members.push(v);
                } else {
                    future_members.push(v);
                }
            }
        }
    }
    let train_fc = ForecastPanel::from_members(
        fc.times[..train_len].to_vec(),
        n,
        fc.n_members(),
        train_members,
    )?;
    let future_fc = ForecastPanel::from_members(
        fc.times[train_len..].to_vec(),
        n,
        fc.n_members(),
        future_members,
    )?;

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let fitted = fit(&config, &train_obs, &train_fc, &data.network, &options, &mut rng)?;
    println!(
        "fitted {} on {} stations; posterior mean decay {:.4} /km",
        config.model_kind,
        n,
        fitted.draws.phi_decay.iter().sum::<f64>() / fitted.draws.n_draws() as f64
    );

    // A 7 x 7 grid spanning the station bounding box. The grid inherits the
    // area-mean ensemble forecast for the target hour; a real deployment
    // would interpolate the NWP fields instead.
    let hour = 6usize;
    let stations = data.network.stations();
    let (lat_min, lat_max) = min_max(stations.iter().map(|s| s.latitude));
    let (lon_min, lon_max) = min_max(stations.iter().map(|s| s.longitude));
    let fbar_area = (0..n).map(|i| future_fc.ensemble_mean[(hour - 1, i)]).sum::<f64>() / n as f64;
    let var_area = (0..n).map(|i| future_fc.ensemble_var[(hour - 1, i)]).sum::<f64>() / n as f64;
    let side = 7usize;
    let mut grid = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            grid.push(GridPoint {
                latitude: lat_max - (lat_max - lat_min) * r as f64 / (side - 1) as f64,
                longitude: lon_min + (lon_max - lon_min) * c as f64 / (side - 1) as f64,
                elevation: 500.0,
                roughness_length: 0.05,
                fbar: fbar_area,
                ensemble_var: var_area,
            });
        }
    }
    let field = predict_field(&fitted, &grid, &future_fc, hour, &mut rng)?;

    println!("\nmedian wind speed (m/s) at {} on a {side} x {side} grid:", field.time);
    for r in 0..side {
        let row: Vec<String> =
            (0..side).map(|c| format!("{:5.1}", field.median[r * side + c])).collect();
        println!("  {}", row.join(" "));
    }
    println!("\n90% margin of error (m/s); tighter cells sit nearer stations:");
    for r in 0..side {
        let row: Vec<String> = (0..side)
            .map(|c| format!("{:5.1}", field.margin_of_error[r * side + c]))
            .collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}

fn min_max(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
