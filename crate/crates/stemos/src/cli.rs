//! Batch command-line front end: fit, forecast, score, simulate and
//! sensitivity subcommands driven by a JSON run configuration.
//!
//! Progress goes to standard error; results go only to files under --out.
//! Every command is deterministic given the configured seed.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::Duration;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::calibrators::{
    self, fit, load_archive, predict, predict_field, rolling_calibration, FitOptions,
};
use crate::domain::{Discounts, ForecastPanel, ModelConfig, ObsStatus, ObservationPanel, StationNetwork};
use crate::error::{Error, Result};
use crate::ingest;
use crate::scoring::{self, CaseTable};
use crate::simulate::{generate_scenario, ScenarioSpec};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub stations: PathBuf,
    pub observations: PathBuf,
    pub ensemble: PathBuf,
}

/// Rolling refit-and-predict schedule over panel hour indices.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub first_origin: usize,
    pub origin_step: usize,
    pub n_origins: usize,
    pub horizon: usize,
}

impl Schedule {
    pub fn origins(&self) -> Vec<usize> {
        (0..self.n_origins)
            .map(|k| self.first_origin + k * self.origin_step)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySpec {
    pub setups: Vec<Discounts>,
}

/// Single JSON configuration consumed by every subcommand. The seed is
/// mandatory: no command falls back to wall-clock entropy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub censor_threshold: f64,
    #[serde(default = "default_availability")]
    pub availability_min: f64,
    /// Cap on posterior draws carried into prediction mixtures.
    #[serde(default)]
    pub prediction_draws: Option<usize>,
    #[serde(default)]
    pub data: Option<DataPaths>,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub sensitivity: Option<SensitivitySpec>,
}

fn default_availability() -> f64 {
    0.70
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        if !(0.0..=1.0).contains(&self.availability_min) {
            return Err(Error::config("availability_min outside [0, 1]"));
        }
        if let Some(sch) = &self.schedule {
            if sch.n_origins == 0 || sch.horizon == 0 || sch.origin_step == 0 {
                return Err(Error::config("schedule values must be positive"));
            }
        }
        if let Some(sens) = &self.sensitivity {
            if sens.setups.is_empty() {
                return Err(Error::config("sensitivity needs at least one setup"));
            }
            for d in &sens.setups {
                d.validate()?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "stemos",
    version,
    about = "Bayesian calibration of ensemble wind forecasts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the rayon global setting).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fitted-model archive directory written by `fit`.
    #[arg(long)]
    pub archive: PathBuf,
    /// Ensemble CSV covering the forecast horizon.
    #[arg(long)]
    pub future: PathBuf,
    /// Hours ahead to forecast.
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
    /// Target-point CSV for an additional field forecast.
    #[arg(long)]
    pub grid_points: Option<PathBuf>,
    /// Forecast hour for the field product (1-based).
    #[arg(long, default_value_t = 1)]
    pub field_hour: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Forecast CSV written by `forecast`.
    #[arg(long)]
    pub forecast: PathBuf,
    /// Observation CSV with the verifying values.
    #[arg(long)]
    pub actuals: PathBuf,
    /// Predictive-member CSV for the rank histogram.
    #[arg(long)]
    pub members: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a calibration model and write its posterior archive.
    Fit(CommonArgs),
    /// Forecast from an archive over a future ensemble panel.
    Forecast(ForecastArgs),
    /// Verify forecasts against observations.
    Score(ScoreArgs),
    /// Generate a synthetic dataset with recorded truth.
    Simulate(CommonArgs),
    /// Rolling-origin evaluation over a grid of discount setups.
    Sensitivity(CommonArgs),
}

/// Entry point for the binary: parse, dispatch, map errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    let common = match &command {
        Command::Fit(c) | Command::Simulate(c) | Command::Sensitivity(c) => c,
        Command::Forecast(f) => &f.common,
        Command::Score(s) => &s.common,
    };
    if let Some(n) = common.threads {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    match command {
        Command::Fit(args) => cmd_fit(&cfg, &args.out),
        Command::Forecast(args) => cmd_forecast(&cfg, &args),
        Command::Score(args) => cmd_score(&cfg, &args),
        Command::Simulate(args) => cmd_simulate(&cfg, &args.out),
        Command::Sensitivity(args) => cmd_sensitivity(&cfg, &args.out),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

struct Dataset {
    observations: ObservationPanel,
    forecasts: ForecastPanel,
    network: StationNetwork,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(paths) = &cfg.data {
        let loaded = ingest::load_panels(
            &paths.stations,
            &paths.observations,
            &paths.ensemble,
            cfg.censor_threshold,
            cfg.availability_min,
        )?;
        for (id, avail) in &loaded.dropped {
            eprintln!("dropping station {id}: availability {:.1}%", 100.0 * avail);
        }
        Ok(Dataset {
            observations: loaded.observations,
            forecasts: loaded.forecasts,
            network: loaded.network,
        })
    } else if let Some(spec) = &cfg.scenario {
        let data = generate_scenario(spec)?;
        Ok(Dataset {
            observations: data.observations,
            forecasts: data.forecasts,
            network: data.network,
        })
    } else {
        Err(Error::config(
            "config needs either data paths or a scenario block",
        ))
    }
}

fn fit_options(cfg: &RunConfig, compute_fit_likelihoods: bool) -> FitOptions {
    FitOptions {
        prediction_draws: cfg.prediction_draws.unwrap_or(200),
        compute_fit_likelihoods,
        ..FitOptions::default()
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    eprintln!(
        "fitting {} on {} stations x {} hours (window {})",
        cfg.model.model_kind,
        data.network.len(),
        data.observations.t_len(),
        cfg.model.training_window_hours
    );
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let fitted = fit(
        &cfg.model,
        &data.observations,
        &data.forecasts,
        &data.network,
        &fit_options(cfg, true),
        &mut rng,
    )?;
    eprintln!(
        "retained {} draws, acceptance {:.3}, {} augmented cells",
        fitted.draws.n_draws(),
        fitted.diagnostics.ram_acceptance,
        fitted.diagnostics.n_augmented
    );
    let archive_dir = out.join("archive");
    calibrators::save_archive(&fitted, &archive_dir)?;
    eprintln!("archive written to {}", archive_dir.display());
    Ok(())
}

fn even_subset(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let stride = n as f64 / cap as f64;
    (0..cap).map(|k| (k as f64 * stride) as usize).collect()
}

fn cmd_forecast(cfg: &RunConfig, args: &ForecastArgs) -> Result<()> {
    let fitted = load_archive(&args.archive)?;
    let ids: Vec<String> = fitted
        .network
        .stations()
        .iter()
        .map(|s| s.id.clone())
        .collect();
    let future = ingest::load_ensemble(&args.future, &ids)?;
    let expected_start = fitted.training_span.1 + Duration::hours(1);
    if future.times[0] != expected_start {
        eprintln!(
            "warning: future panel starts at {} but training ended at {}",
            future.times[0], fitted.training_span.1
        );
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let forecast = predict(&fitted, &future, args.horizon, &mut rng)?;
    let out = &args.common.out;
    forecast.write_csv(&out.join("forecast.csv"))?;

    // Nine evenly spaced sampled panels as predictive members.
    let members_path = out.join("forecast_members.csv");
    let picks = even_subset(forecast.draws.len(), 9);
    let mut w = std::fs::File::create(&members_path).map_err(|e| Error::io(&members_path, e))?;
    writeln!(w, "origin,station_id,horizon,member_index,value")
        .map_err(|e| Error::io(&members_path, e))?;
    for h in 0..args.horizon {
        for (i, id) in ids.iter().enumerate() {
            for (k, &d) in picks.iter().enumerate() {
                writeln!(
                    w,
                    "{},{id},{},{k},{}",
                    forecast.origin.to_rfc3339(),
                    h + 1,
                    forecast.draws[d][(h, i)]
                )
                .map_err(|e| Error::io(&members_path, e))?;
            }
        }
    }
    eprintln!(
        "forecast for {} stations x {} hours written",
        ids.len(),
        args.horizon
    );

    if let Some(points_path) = &args.grid_points {
        let grid = ingest::load_grid_points(points_path)?;
        let field = predict_field(&fitted, &grid, &future, args.field_hour, &mut rng)?;
        let field_path = out.join("field.csv");
        let mut w = std::fs::File::create(&field_path).map_err(|e| Error::io(&field_path, e))?;
        writeln!(w, "latitude,longitude,median,lo90,hi90,margin_of_error")
            .map_err(|e| Error::io(&field_path, e))?;
        for (j, p) in grid.iter().enumerate() {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                p.latitude, p.longitude, field.median[j], field.lo90[j], field.hi90[j],
                field.margin_of_error[j]
            )
            .map_err(|e| Error::io(&field_path, e))?;
        }
        eprintln!("field forecast at {} points written", grid.len());
    }
    Ok(())
}

fn cmd_score(cfg: &RunConfig, args: &ScoreArgs) -> Result<()> {
    let rows = ingest::load_forecast_rows(&args.forecast)?;
    let actual_rows = ingest::load_observation_rows(&args.actuals, cfg.censor_threshold)?;
    let actuals: BTreeMap<(chrono::DateTime<chrono::Utc>, &str), (f64, ObsStatus)> = actual_rows
        .iter()
        .map(|r| ((r.time, r.station_id.as_str()), (r.value, r.status)))
        .collect();
    let mut members: BTreeMap<(chrono::DateTime<chrono::Utc>, String), Vec<(usize, f64)>> =
        BTreeMap::new();
    if let Some(members_path) = &args.members {
        for m in ingest::load_member_rows(members_path)? {
            let valid = m.origin + Duration::hours(m.horizon as i64);
            members
                .entry((valid, m.station_id))
                .or_default()
                .push((m.member_index, m.value));
        }
        for v in members.values_mut() {
            v.sort_unstable_by_key(|(k, _)| *k);
        }
    }

    let mut table = CaseTable::default();
    let mut skipped_missing = 0usize;
    for row in &rows {
        let valid = row.origin + Duration::hours(row.horizon as i64);
        let Some(&(actual, status)) = actuals.get(&(valid, row.station_id.as_str())) else {
            skipped_missing += 1;
            continue;
        };
        if status == ObsStatus::Missing {
            skipped_missing += 1;
            continue;
        }
        let mem = members
            .get(&(valid, row.station_id.clone()))
            .map(|v| v.iter().map(|(_, x)| *x).collect())
            .unwrap_or_default();
        table.push(valid, actual, row.median, row.lo90, row.hi90, mem);
    }
    if table.is_empty() {
        return Err(Error::data("no forecast rows matched an actual observation"));
    }
    if skipped_missing > 0 {
        eprintln!("skipped {skipped_missing} cases without a verifying observation");
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let reports = table.seasonal_reports(0.1, &mut rng)?;
    let out = &args.common.out;
    reports[0].1.write_json(&out.join("report.json"))?;
    scoring::write_reports_csv(&out.join("seasonal.csv"), &reports)?;

    let hist_path = out.join("rank_histogram.csv");
    let mut w = std::fs::File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    writeln!(w, "bin,count").map_err(|e| Error::io(&hist_path, e))?;
    for (b, c) in reports[0].1.rank_histogram.iter().enumerate() {
        writeln!(w, "{},{c}", b + 1).map_err(|e| Error::io(&hist_path, e))?;
    }

    let dec_path = out.join("decomposition.csv");
    let mut w = std::fs::File::create(&dec_path).map_err(|e| Error::io(&dec_path, e))?;
    writeln!(w, "component,value,share").map_err(|e| Error::io(&dec_path, e))?;
    let rep = &reports[0].1;
    let shares = rep.decomposition_shares().unwrap_or((f64::NAN, f64::NAN));
    writeln!(w, "amplitude,{:.6},{:.6}", rep.rmse_decomposition.0, shares.0)
        .map_err(|e| Error::io(&dec_path, e))?;
    writeln!(w, "phase,{:.6},{:.6}", rep.rmse_decomposition.1, shares.1)
        .map_err(|e| Error::io(&dec_path, e))?;
    eprintln!(
        "scored {} cases: mae {:.4}, rmse {:.4}, d {:.4}",
        rep.cases, rep.mae, rep.rmse, rep.d
    );
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let Some(spec) = &cfg.scenario else {
        return Err(Error::config("simulate needs a scenario block"));
    };
    let data = generate_scenario(spec)?;
    ingest::write_scenario_dataset(&data, out)?;
    eprintln!(
        "scenario {} seed {}: {} stations x {} hours, {:.1}% censored",
        spec.scenario,
        spec.seed,
        data.network.len(),
        data.observations.t_len(),
        100.0 * data.truth.censored_fraction
    );
    Ok(())
}

fn cmd_sensitivity(cfg: &RunConfig, out: &Path) -> Result<()> {
    let Some(sens) = &cfg.sensitivity else {
        return Err(Error::config("sensitivity needs a sensitivity block"));
    };
    let Some(schedule) = &cfg.schedule else {
        return Err(Error::config("sensitivity needs a schedule block"));
    };
    let data = load_dataset(cfg)?;
    let origins = schedule.origins();
    let csv_path = out.join("sensitivity.csv");
    let mut w = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(w, "delta_t,delta_s,delta_v,mae,rmse,cases").map_err(|e| Error::io(&csv_path, e))?;
    for setup in &sens.setups {
        let mut model = cfg.model.clone();
        model.discounts = *setup;
        let results = rolling_calibration(
            &model,
            &data.observations,
            &data.forecasts,
            &data.network,
            &origins,
            schedule.horizon,
            &fit_options(cfg, false),
            cfg.seed,
        )?;
        let mut actual = Vec::new();
        let mut predicted = Vec::new();
        for r in &results {
            let n = data.network.len();
            for h in 0..schedule.horizon {
                for i in 0..n {
                    if r.actual_status[h * n + i] == ObsStatus::Missing {
                        continue;
                    }
                    actual.push(r.actual[(h, i)]);
                    predicted.push(r.forecast.median[(h, i)]);
                }
            }
        }
        let (mae, rmse) = scoring::mae_rmse(&actual, &predicted)?;
        writeln!(
            w,
            "{},{},{},{mae:.6},{rmse:.6},{}",
            setup.delta_t,
            setup.delta_s,
            setup.delta_v,
            actual.len()
        )
        .map_err(|e| Error::io(&csv_path, e))?;
        eprintln!(
            "discounts ({}, {}, {}): mae {mae:.4} over {} cases",
            setup.delta_t,
            setup.delta_s,
            setup.delta_v,
            actual.len()
        );
    }
    eprintln!("sensitivity table written to {}", csv_path.display());
    Ok(())
}
