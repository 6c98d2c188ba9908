//! Generate one of the three synthetic benchmark worlds and write it to
//! disk in the CSV layout the command-line tools read: a station table, an
//! observation record with censoring flags, the raw ensemble, and a truth
//! file recording every generating parameter.
//!
//! Usage: cargo run --release --example simulate_dataset [scenario] [out_dir]

use stemos::ingest;
use stemos::simulate::{generate_scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let scenario: u8 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let out = args.next().unwrap_or_else(|| format!("scenario{scenario}_data"));

    let spec = ScenarioSpec { n_sites: 10, t_len: 480, ..ScenarioSpec::new(scenario, 1)? };
    let data = generate_scenario(&spec)?;
    ingest::write_scenario_dataset(&data, std::path::Path::new(&out))?;

    let t = &data.truth;
    println!("wrote {out}/{{stations.csv, observations.csv, ensemble.csv, truth.json}}");
    println!("\ngenerating mechanism (scenario {scenario}):");
    println!("  {} stations x {} hours, {} ensemble members", t.n_sites, t.t_len, spec.n_members);
    println!("  power exponent {} with censoring below {} m/s", t.lambda, t.censor);
    if t.mean_follows_ensemble {
        println!("  calibrated mean follows the transformed ensemble mean");
    } else {
        println!("  calibration map: {} + {} * ensemble mean", t.intercept, t.slope);
    }
    println!("  diurnal amplitude (cos, sin): ({}, {})", t.harmonic[0], t.harmonic[1]);
    if !t.amplitude_drift.is_empty() {
        println!("  amplitude wander (lag-1 corr, sd): {:?}", t.amplitude_drift);
    }
    println!("  level wander (lag-1 corr, sd): {:?}", t.level_drift);
    match t.phi_decay {
        Some(d) => println!(
            "  spatially correlated errors, decay {d:.4} /km (practical range {:.0} km)",
            t.practical_range_km.unwrap_or(3.0 / d)
        ),
        None => println!("  spatially independent errors"),
    }
    if let Some(beta) = t.beta {
        println!("  spread-skill error variance: {} + {} * ensemble variance", beta[0], beta[1]);
    }
    println!(
        "  realized: {:.1}% censored, {:.1}% missing",
        100.0 * t.censored_fraction,
        100.0 * t.missing_fraction
    );
    println!("\nnext: point the fit/forecast commands at these files, e.g.");
    println!("  stemos fit --config config.json --out fits/");
    Ok(())
}
