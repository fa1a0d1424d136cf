//! Command-line front end for the sensor-network calibration experiments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use driftnet::config::ExperimentConfig;
use driftnet::error::{Error, Result};
use driftnet::{harness, report, stats};

#[derive(Parser)]
#[command(
    name = "driftnet",
    version,
    about = "Rendezvous-driven recalibration experiments for mobile chemical-sensor networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scheme across all repetitions
    Run(CommonArgs),
    /// Compare weight schemes (uncalibrated / uniform / reciprocal-age /
    /// optimized by default) on identical per-repetition traces
    CompareWeights(CommonArgs),
    /// Run the configured scheme at each network size in `sizes`
    SweepSize(CommonArgs),
    /// Tune per-sensor decay constants offline and report diagnostics
    TuneLambda(CommonArgs),
    /// Validate the resolved configuration and print it as TOML
    ValidateConfig(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to a TOML or JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON results
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Experiment seed (applied after --set overrides)
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, repeatable; dotted keys reach nested tables
    /// (e.g. --set n_sensors=5 --set plume.amplitude=80)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    fn load_config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.set, self.seed)
    }

    fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load_config()?;
            args.ensure_out_dir()?;
            let (metrics, summary) = harness::run_single(&cfg)?;
            let runs = vec![(summary.condition.clone(), metrics)];
            report::write_runs_csv(&args.out.join("run.csv"), &runs)?;
            report::write_json(&args.out.join("run.json"), &summary)?;
            println!(
                "{}: time-avg error {:.4}% +/- {:.4} | rendezvous/step {:.4}",
                summary.condition,
                summary.aggregate.mean_time_avg_error_pct,
                summary.aggregate.std_time_avg_error_pct,
                summary.aggregate.mean_rendezvous_per_step,
            );
            println!("wrote {} and run.json", args.out.join("run.csv").display());
            Ok(())
        }
        Command::CompareWeights(args) => {
            let cfg = args.load_config()?;
            args.ensure_out_dir()?;
            let result = harness::run_weight_comparison(&cfg)?;
            report::write_runs_csv(&args.out.join("compare_weights.csv"), &result.runs)?;
            report::write_json(&args.out.join("compare_weights.json"), &result.summary)?;
            for c in &result.summary.conditions {
                let reduction = c
                    .reduction_vs_uncalibrated_pct
                    .map(|r| format!(" | reduction vs uncalibrated {r:.1}%"))
                    .unwrap_or_default();
                println!(
                    "{}: time-avg error {:.4}% +/- {:.4}{reduction}",
                    c.condition, c.mean_time_avg_error_pct, c.std_time_avg_error_pct,
                );
            }
            println!(
                "wrote {} and compare_weights.json",
                args.out.join("compare_weights.csv").display()
            );
            Ok(())
        }
        Command::SweepSize(args) => {
            let cfg = args.load_config()?;
            args.ensure_out_dir()?;
            let sizes = cfg.sizes.clone();
            let result = harness::run_size_sweep(&cfg, &sizes)?;
            report::write_runs_csv(&args.out.join("sweep_size.csv"), &result.runs)?;
            report::write_json(&args.out.join("sweep_size.json"), &result.summary)?;
            for p in &result.summary.points {
                println!(
                    "n={}: time-avg error {:.4}% +/- {:.4} | rendezvous/step {:.4}",
                    p.n_sensors,
                    p.mean_time_avg_error_pct,
                    p.std_time_avg_error_pct,
                    p.mean_rendezvous_per_step,
                );
            }
            println!(
                "spearman(error, size) = {:.3}",
                result.summary.spearman_error_vs_size
            );
            println!(
                "wrote {} and sweep_size.json",
                args.out.join("sweep_size.csv").display()
            );
            Ok(())
        }
        Command::TuneLambda(args) => {
            let cfg = args.load_config()?;
            args.ensure_out_dir()?;
            let summary = harness::tune_report(&cfg)?;
            report::write_json(&args.out.join("tune_lambda.json"), &summary)?;
            let lambdas: Vec<f64> = summary.sensors.iter().map(|s| s.lambda).collect();
            let improved = summary
                .sensors
                .iter()
                .filter(|s| s.objective < s.objective_at_zero)
                .count();
            println!(
                "tuned {} sensors: lambda mean {:.4}, min {:.4}, max {:.4}; {improved} beat uniform weights",
                lambdas.len(),
                stats::mean(&lambdas),
                lambdas.iter().cloned().fold(f64::INFINITY, f64::min),
                lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
            println!(
                "wrote {}",
                args.out.join("tune_lambda.json").display()
            );
            Ok(())
        }
        Command::ValidateConfig(args) => {
            let cfg = args.load_config()?;
            let text = toml::to_string_pretty(&cfg)
                .map_err(|e| Error::Config(format!("cannot render config: {e}")))?;
            print!("{text}");
            Ok(())
        }
    }
}
