//! Dev-only diagnostic: multi-seed scheme comparison across candidate
//! harness defaults, and the lambda objective landscape.

use driftnet::config::ExperimentConfig;
use driftnet::harness::{run_condition, Condition};
use driftnet::optimizer::{lambda_objective, optimize_lambda, TrainingTrace};
use driftnet::rng;
use driftnet::sensor::{measure, true_params_at, DriftParams, SensorState};
use driftnet::stats;

fn build_sensors(cfg: &ExperimentConfig, rep_seed: u64) -> Vec<SensorState> {
    let mut drift_rng = rng::stream_rng(rep_seed, rng::STREAM_DRIFT_INIT);
    (0..cfg.n_sensors)
        .map(|id| {
            use rand::Rng;
            let coeffs: Vec<f64> = cfg.drift_init_ranges.iter()
                .map(|&[lo, hi]| lo + drift_rng.random::<f64>() * (hi - lo))
                .collect();
            SensorState::new(id, DriftParams::new(coeffs).unwrap(), cfg.alpha.clone()).unwrap()
        })
        .collect()
}

fn lambda_landscape(cfg: &ExperimentConfig) {
    let rep_seed = rng::derive_seed(cfg.seed, 0);
    let sensors = build_sensors(cfg, rep_seed);
    for sensor in sensors.iter().take(3) {
        use rand::Rng;
        let base = rng::derive_seed(rep_seed, rng::STREAM_TRAINING);
        let mut rng = rng::stream_rng(base, sensor.id as u64);
        let tnoise: f64 = std::env::var("DN_TNOISE").ok().and_then(|v| v.parse().ok()).unwrap_or(0.5);
        let mut stimuli = Vec::new();
        let mut responses = Vec::new();
        for t in 1..=cfg.training_steps {
            use rand_distr::{Distribution, StandardNormal};
            let x = (1.0 - rng.random::<f64>()) * cfg.plume.amplitude;
            let z: f64 = StandardNormal.sample(&mut rng);
            stimuli.push((x, t));
            responses.push(measure(&true_params_at(&sensor.initial_params, &sensor.alpha, t), x) + tnoise * z);
        }
        let trace = TrainingTrace::new(stimuli, responses).unwrap();
        print!("sensor {}: ", sensor.id);
        for lambda in [0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0] {
            let obj = lambda_objective(&trace, lambda, cfg.degree, cfg.x_max()).unwrap();
            print!("{lambda}:{obj:.4} ");
        }
        println!();
        let sa_seed = rng::derive_seed(rng::derive_seed(rep_seed, rng::STREAM_ANNEAL), sensor.id as u64);
        let result = optimize_lambda(&trace, &cfg.sa_schedule(), sa_seed, cfg.degree, cfg.x_max()).unwrap();
        println!("  SA -> lambda={:.4} objective={:.5}", result.lambda, result.objective);
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "lambda") {
        lambda_landscape(&ExperimentConfig::default());
        return;
    }

    let seeds: Vec<u64> = (0..4).collect();
    let conditions = [
        ("uncal", Condition::parse("uncalibrated").unwrap()),
        ("uniform", Condition::parse("uniform").unwrap()),
        ("linear", Condition::parse("reciprocal_age").unwrap()),
        ("exp.01", Condition::parse("exponential:0.01").unwrap()),
        ("exp.03", Condition::parse("exponential:0.03").unwrap()),
        ("exp.10", Condition::parse("exponential:0.1").unwrap()),
    ];

    for walk in [5.0, 20.0] {
        for interval in [0u64, 4, 8, 16, 32] {
            let mut base = ExperimentConfig::default();
            base.plume.walk_step = walk;
            base.exchange_interval = interval;
            let mut row = format!("walk={walk:<4} gap={interval:<3}");
            let mut uncal_means = Vec::new();
            for (name, cond) in &conditions {
                let mut time_avgs = Vec::new();
                for &seed in &seeds {
                    let mut cfg = base.clone();
                    cfg.seed = 1000 + seed;
                    let m = run_condition(&cfg, cond, 0).unwrap();
                    time_avgs.push(m.time_avg_error());
                }
                let mean = stats::mean(&time_avgs);
                if *name == "uncal" {
                    uncal_means = time_avgs.clone();
                    row += &format!(" {name}={mean:.3}");
                } else {
                    let reds: Vec<f64> = time_avgs
                        .iter()
                        .zip(&uncal_means)
                        .map(|(s, u)| (1.0 - s / u) * 100.0)
                        .collect();
                    row += &format!(" {name}={mean:.3}({:+.0}%)", stats::mean(&reds));
                }
            }
            println!("{row}");
        }
        println!();
    }
}
