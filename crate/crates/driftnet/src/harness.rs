//! Experiment orchestration: single-condition runs, the weight-scheme
//! comparison, and the network-size sweep.
//!
//! Every repetition derives all of its randomness (mobility, plume walk,
//! drift initialization, noise, training traces, annealing chains) from
//! dedicated streams of the repetition seed, so conditions that share a
//! repetition see bit-identical traces and parallel execution cannot change
//! any result. Repetitions run in parallel; `DRIFTNET_THREADS` caps the
//! worker pool.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{rendezvous_update, CalibrationOptions, FitScheme, WeightScheme};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::mobility::{find_rendezvous, init_mobility, step_mobility};
use crate::optimizer::{anneal, lambda_objective, optimize_lambda, SaResult, TrainingTrace};
use crate::plume::PlumeField;
use crate::rng;
use crate::sensor::{DriftParams, SensorState};
use crate::stats;

/// One experimental condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    /// Sensors keep their deployment-time parameters forever.
    Uncalibrated,
    /// Rendezvous recalibration with a shared weight scheme.
    Scheme(WeightScheme),
    /// Rendezvous recalibration with per-sensor exponential weights whose
    /// decay constants were tuned offline by simulated annealing.
    Optimized,
}

impl Condition {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uncalibrated" => Ok(Condition::Uncalibrated),
            "uniform" => Ok(Condition::Scheme(WeightScheme::Uniform)),
            "reciprocal_age" | "linear" => Ok(Condition::Scheme(WeightScheme::ReciprocalAge)),
            "optimized" => Ok(Condition::Optimized),
            other => {
                if let Some(rest) = other.strip_prefix("exponential:") {
                    let lambda: f64 = rest.parse().map_err(|_| {
                        Error::Config(format!("bad exponential decay constant: {rest}"))
                    })?;
                    if lambda < 0.0 {
                        return Err(Error::Config(
                            "exponential decay constant must be non-negative".into(),
                        ));
                    }
                    Ok(Condition::Scheme(WeightScheme::Exponential { lambda }))
                } else {
                    Err(Error::Config(format!(
                        "unknown scheme {other}; expected uncalibrated, uniform, \
                         reciprocal_age, exponential:<lambda>, or optimized"
                    )))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Condition::Uncalibrated => "uncalibrated".into(),
            Condition::Scheme(WeightScheme::Uniform) => "uniform".into(),
            Condition::Scheme(WeightScheme::ReciprocalAge) => "reciprocal_age".into(),
            Condition::Scheme(WeightScheme::Exponential { lambda }) => {
                format!("exponential_{lambda}")
            }
            Condition::Optimized => "optimized".into(),
        }
    }
}

/// Per-repetition output of one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Mean relative error across sensors, percent of plume amplitude,
    /// one entry per step.
    pub error_pct: Vec<f64>,
    /// Rendezvous groups formed per step.
    pub rendezvous: Vec<u32>,
    /// Tuned per-sensor decay constants (optimized condition only).
    pub lambdas: Vec<f64>,
    /// Count of non-monotone inversion diagnostics raised.
    pub non_monotone_inversions: u64,
}

impl RunMetrics {
    pub fn time_avg_error(&self) -> f64 {
        stats::mean(&self.error_pct)
    }

    pub fn final_error(&self) -> f64 {
        *self.error_pct.last().expect("at least one step")
    }
}

/// Caps rayon's global pool at `DRIFTNET_THREADS` when the variable is set.
/// Results never depend on the pool size.
pub fn init_parallelism() {
    static INIT: once_cell::sync::OnceCell<()> = once_cell::sync::OnceCell::new();
    INIT.get_or_init(|| {
        if let Some(n) = std::env::var("DRIFTNET_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
        {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    });
}

fn build_sensors(cfg: &ExperimentConfig, rep_seed: u64) -> Result<Vec<SensorState>> {
    let mut drift_rng = rng::stream_rng(rep_seed, rng::STREAM_DRIFT_INIT);
    let mut sensors = Vec::with_capacity(cfg.n_sensors);
    for id in 0..cfg.n_sensors {
        let coeffs: Vec<f64> = cfg
            .drift_init_ranges
            .iter()
            .map(|&[low, high]| {
                use rand::Rng;
                low + drift_rng.random::<f64>() * (high - low)
            })
            .collect();
        let mut sensor = SensorState::new(id, DriftParams::new(coeffs)?, cfg.alpha.clone())?;
        if cfg.factory_table_size > 0 {
            sensor.seed_factory_table(cfg.factory_table_size, cfg.plume.amplitude);
        }
        sensors.push(sensor);
    }
    Ok(sensors)
}

/// Synthesizes the offline training trace for one sensor: uniform stimuli in
/// (0, amplitude] over `training_steps` steps, responses through the
/// sensor's true drifting polynomial.
fn training_trace(cfg: &ExperimentConfig, sensor: &SensorState, rep_seed: u64) -> Result<TrainingTrace> {
    use rand::Rng;
    let base = rng::derive_seed(rep_seed, rng::STREAM_TRAINING);
    let mut rng = rng::stream_rng(base, sensor.id as u64);
    // Bench samples arrive at the field exchange cadence so the tuned decay
    // constant transfers to deployment, where tuples are that far apart.
    let cadence = cfg.exchange_interval.max(1);
    let mut stimuli = Vec::with_capacity(cfg.training_steps as usize);
    let mut responses = Vec::with_capacity(cfg.training_steps as usize);
    for k in 1..=cfg.training_steps {
        let t = k * cadence;
        let x = (1.0 - rng.random::<f64>()) * cfg.plume.amplitude;
        let mut y = sensor.read_raw(x, t);
        if cfg.training_noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            y += cfg.training_noise_sigma * z;
        }
        stimuli.push((x, t));
        responses.push(y);
    }
    TrainingTrace::new(stimuli, responses)
}

/// Tunes decay constants for every sensor, one annealing chain per sensor
/// (or a single chain on the pooled objective in `shared` mode).
pub fn tune_lambdas(
    cfg: &ExperimentConfig,
    rep_seed: u64,
    sensors: &[SensorState],
) -> Result<Vec<SaResult>> {
    let schedule = cfg.sa_schedule();
    let anneal_base = rng::derive_seed(rep_seed, rng::STREAM_ANNEAL);
    match cfg.lambda_mode.as_str() {
        "shared" => {
            let traces: Vec<TrainingTrace> = sensors
                .iter()
                .map(|s| training_trace(cfg, s, rep_seed))
                .collect::<Result<_>>()?;
            let result = anneal(
                |lambda| {
                    let mut total = 0.0;
                    for trace in &traces {
                        total += lambda_objective(trace, lambda, cfg.degree, cfg.x_max())?;
                    }
                    Ok(total / traces.len() as f64)
                },
                &schedule,
                anneal_base,
            )?;
            Ok(vec![result; sensors.len()])
        }
        _ => sensors
            .par_iter()
            .map(|sensor| {
                let trace = training_trace(cfg, sensor, rep_seed)?;
                let seed = rng::derive_seed(anneal_base, sensor.id as u64);
                optimize_lambda(&trace, &schedule, seed, cfg.degree, cfg.x_max())
            })
            .collect(),
    }
}

/// Runs one condition for one repetition.
///
/// Per step: advance the plume and every sensor, measure the truth at each
/// position through the true drifting parameters, detect rendezvous groups,
/// apply the condition's recalibration, and record the mean relative error
/// |xhat - x| / amplitude * 100 across sensors.
pub fn run_condition(cfg: &ExperimentConfig, condition: &Condition, rep: u32) -> Result<RunMetrics> {
    let bounds = cfg.grid_bounds()?;
    let rwp = cfg.rwp_params();
    let opts = CalibrationOptions {
        degree: cfg.degree,
        x_max: cfg.x_max(),
        table_cap: cfg.table_cap_opt(),
        consensus: cfg.consensus()?,
        usable_resolution: cfg.usable_resolution,
    };
    let rep_seed = rng::derive_seed(cfg.seed, rep as u64);

    let mut mobility = init_mobility(cfg.n_sensors, &bounds, &rwp, rep_seed)?;
    let mut mob_rng = rng::stream_rng(rep_seed, rng::STREAM_MOBILITY_STEP);
    let mut plume_rng = rng::stream_rng(rep_seed, rng::STREAM_PLUME);
    let mut noise_rng = rng::stream_rng(rep_seed, rng::STREAM_NOISE);
    let mut plume = PlumeField::new(
        bounds.center(),
        cfg.plume.sigma_x,
        cfg.plume.sigma_y,
        cfg.plume.amplitude,
        cfg.plume.walk_step,
        &bounds,
    )?;
    let mut sensors = build_sensors(cfg, rep_seed)?;

    let mut lambdas = Vec::new();
    let fit_scheme = match condition {
        Condition::Uncalibrated => None,
        Condition::Scheme(scheme) => Some(FitScheme::Shared(*scheme)),
        Condition::Optimized => {
            let tuned = tune_lambdas(cfg, rep_seed, &sensors)?;
            for (sensor, result) in sensors.iter_mut().zip(&tuned) {
                sensor.lambda = result.lambda;
            }
            lambdas = tuned.iter().map(|r| r.lambda).collect();
            Some(FitScheme::PerSensorExponential)
        }
    };

    let n = cfg.n_sensors;
    let mut error_pct = Vec::with_capacity(cfg.steps as usize);
    let mut rendezvous = Vec::with_capacity(cfg.steps as usize);
    let mut non_monotone = 0u64;
    // Last exchange step per sensor pair, for the contact refractory.
    let mut last_exchange = vec![0u64; n * n];

    for t in 1..=cfg.steps {
        plume = plume.step(&bounds, &mut plume_rng);
        for state in &mut mobility {
            *state = step_mobility(state, &bounds, &rwp, &mut mob_rng);
        }
        let positions: Vec<(f64, f64)> = mobility.iter().map(|m| m.position).collect();
        let truths: Vec<f64> = positions.iter().map(|&p| plume.concentration(p)).collect();
        let mut readings: Vec<f64> = sensors
            .iter()
            .zip(&truths)
            .map(|(s, &x)| s.read_raw(x, t))
            .collect();
        if cfg.noise_sigma > 0.0 {
            for reading in &mut readings {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                *reading += cfg.noise_sigma * z;
            }
        }

        let groups = find_rendezvous(&positions, cfg.range, t);
        rendezvous.push(groups.len() as u32);
        if let Some(fit) = fit_scheme {
            for group in &groups {
                // A sustained contact exchanges again only after the
                // refractory expires; a group with any fresh pair exchanges.
                let fresh_pair = group.member_ids.iter().enumerate().any(|(k, &i)| {
                    group.member_ids[k + 1..].iter().any(|&j| {
                        let last = last_exchange[i * n + j];
                        last == 0 || t - last > cfg.exchange_interval
                    })
                });
                if !fresh_pair {
                    continue;
                }
                for (k, &i) in group.member_ids.iter().enumerate() {
                    for &j in &group.member_ids[k + 1..] {
                        last_exchange[i * n + j] = t;
                        last_exchange[j * n + i] = t;
                    }
                }
                non_monotone += rendezvous_update(group, &mut sensors, &readings, t, fit, &opts)?;
            }
        }

        let mut total = 0.0;
        for i in 0..n {
            let inv = sensors[i].calibrated_estimate(readings[i], opts.x_max);
            if inv.non_monotone {
                non_monotone += 1;
            }
            total += (inv.value - truths[i]).abs() / cfg.plume.amplitude * 100.0;
        }
        error_pct.push(total / n as f64);
    }

    Ok(RunMetrics {
        error_pct,
        rendezvous,
        lambdas,
        non_monotone_inversions: non_monotone,
    })
}

/// All repetitions of one condition (parallel over repetitions).
pub fn run_condition_all_reps(
    cfg: &ExperimentConfig,
    condition: &Condition,
) -> Result<Vec<RunMetrics>> {
    init_parallelism();
    (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_condition(cfg, condition, rep))
        .collect()
}

/// Aggregates of one condition across repetitions.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub time_avg_error_pct_per_rep: Vec<f64>,
    pub final_step_error_pct_per_rep: Vec<f64>,
    pub mean_time_avg_error_pct: f64,
    pub std_time_avg_error_pct: f64,
    pub mean_final_step_error_pct: f64,
    pub std_final_step_error_pct: f64,
    /// Relative reduction of the mean time-averaged error vs the
    /// uncalibrated baseline, percent; absent when no baseline ran.
    pub reduction_vs_uncalibrated_pct: Option<f64>,
    pub mean_rendezvous_per_step: f64,
    pub non_monotone_inversions: u64,
    /// Tuned decay constants, indexed [repetition][sensor] (optimized only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas_per_rep: Option<Vec<Vec<f64>>>,
}

fn summarize_condition(label: &str, runs: &[RunMetrics]) -> ConditionSummary {
    let time_avg: Vec<f64> = runs.iter().map(RunMetrics::time_avg_error).collect();
    let final_err: Vec<f64> = runs.iter().map(RunMetrics::final_error).collect();
    let total_groups: u64 = runs
        .iter()
        .map(|r| r.rendezvous.iter().map(|&c| c as u64).sum::<u64>())
        .sum();
    let total_steps: u64 = runs.iter().map(|r| r.rendezvous.len() as u64).sum();
    let lambdas_per_rep = if runs.iter().any(|r| !r.lambdas.is_empty()) {
        Some(runs.iter().map(|r| r.lambdas.clone()).collect())
    } else {
        None
    };
    ConditionSummary {
        condition: label.to_string(),
        mean_time_avg_error_pct: stats::mean(&time_avg),
        std_time_avg_error_pct: stats::std_dev(&time_avg),
        mean_final_step_error_pct: stats::mean(&final_err),
        std_final_step_error_pct: stats::std_dev(&final_err),
        time_avg_error_pct_per_rep: time_avg,
        final_step_error_pct_per_rep: final_err,
        reduction_vs_uncalibrated_pct: None,
        mean_rendezvous_per_step: total_groups as f64 / total_steps as f64,
        non_monotone_inversions: runs.iter().map(|r| r.non_monotone_inversions).sum(),
        lambdas_per_rep,
    }
}

/// Paired permutation test between two conditions on per-repetition
/// time-averaged errors.
#[derive(Debug, Clone, Serialize)]
pub struct PairComparison {
    pub condition_a: String,
    pub condition_b: String,
    pub p_value: f64,
}

/// Full output of the weight-scheme comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub resolved_config: ExperimentConfig,
    pub conditions: Vec<ConditionSummary>,
    pub pairwise_p_values: Vec<PairComparison>,
}

/// Comparison result: per-condition per-repetition metrics plus aggregates.
#[derive(Debug, Clone)]
pub struct WeightComparison {
    /// (condition label, per-repetition metrics), in config order.
    pub runs: Vec<(String, Vec<RunMetrics>)>,
    pub summary: ComparisonSummary,
}

/// Runs every configured condition on identical per-repetition traces and
/// reports aggregates, reductions vs the uncalibrated baseline, and pairwise
/// paired-permutation p-values on the time-averaged errors.
pub fn run_weight_comparison(cfg: &ExperimentConfig) -> Result<WeightComparison> {
    init_parallelism();
    let conditions: Vec<Condition> = cfg
        .schemes
        .iter()
        .map(|s| Condition::parse(s))
        .collect::<Result<_>>()?;

    let per_rep: Vec<Vec<RunMetrics>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| {
            conditions
                .iter()
                .map(|c| run_condition(cfg, c, rep))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut runs: Vec<(String, Vec<RunMetrics>)> = conditions
        .iter()
        .map(|c| (c.label(), Vec::with_capacity(cfg.repetitions as usize)))
        .collect();
    for rep_metrics in per_rep {
        for (slot, metrics) in runs.iter_mut().zip(rep_metrics) {
            slot.1.push(metrics);
        }
    }

    let mut summaries: Vec<ConditionSummary> = runs
        .iter()
        .map(|(label, metrics)| summarize_condition(label, metrics))
        .collect();

    let baseline = conditions
        .iter()
        .position(|c| matches!(c, Condition::Uncalibrated));
    if let Some(b) = baseline {
        let base_mean = summaries[b].mean_time_avg_error_pct;
        for (i, summary) in summaries.iter_mut().enumerate() {
            if i != b && base_mean > 0.0 {
                summary.reduction_vs_uncalibrated_pct =
                    Some((1.0 - summary.mean_time_avg_error_pct / base_mean) * 100.0);
            }
        }
    }

    let mut pairwise = Vec::new();
    for i in 0..summaries.len() {
        for j in (i + 1)..summaries.len() {
            pairwise.push(PairComparison {
                condition_a: summaries[i].condition.clone(),
                condition_b: summaries[j].condition.clone(),
                p_value: stats::paired_permutation_pvalue(
                    &summaries[i].time_avg_error_pct_per_rep,
                    &summaries[j].time_avg_error_pct_per_rep,
                ),
            });
        }
    }

    Ok(WeightComparison {
        runs,
        summary: ComparisonSummary {
            resolved_config: cfg.clone(),
            conditions: summaries,
            pairwise_p_values: pairwise,
        },
    })
}

/// One network size in the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub n_sensors: usize,
    pub time_avg_error_pct_per_rep: Vec<f64>,
    pub mean_time_avg_error_pct: f64,
    pub std_time_avg_error_pct: f64,
    pub mean_rendezvous_per_step: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub resolved_config: ExperimentConfig,
    pub condition: String,
    pub points: Vec<SweepPoint>,
    /// Spearman rank correlation of mean error vs network size.
    pub spearman_error_vs_size: f64,
}

#[derive(Debug, Clone)]
pub struct SizeSweep {
    /// (condition label with size suffix, per-repetition metrics).
    pub runs: Vec<(String, Vec<RunMetrics>)>,
    pub summary: SweepSummary,
}

/// Runs the configured scheme (optimized by default) at each network size.
pub fn run_size_sweep(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<SizeSweep> {
    if sizes.is_empty() {
        return Err(Error::Config("size sweep needs at least one size".into()));
    }
    init_parallelism();
    let condition = Condition::parse(&cfg.scheme)?;

    let mut runs = Vec::with_capacity(sizes.len());
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut size_cfg = cfg.clone();
        size_cfg.n_sensors = size;
        let metrics = run_condition_all_reps(&size_cfg, &condition)?;
        let summary = summarize_condition(&condition.label(), &metrics);
        points.push(SweepPoint {
            n_sensors: size,
            time_avg_error_pct_per_rep: summary.time_avg_error_pct_per_rep.clone(),
            mean_time_avg_error_pct: summary.mean_time_avg_error_pct,
            std_time_avg_error_pct: summary.std_time_avg_error_pct,
            mean_rendezvous_per_step: summary.mean_rendezvous_per_step,
        });
        runs.push((format!("{}_n{}", condition.label(), size), metrics));
    }

    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_time_avg_error_pct).collect();
    let spearman = if sizes.len() >= 2 {
        stats::spearman(&xs, &ys)
    } else {
        f64::NAN
    };

    Ok(SizeSweep {
        runs,
        summary: SweepSummary {
            resolved_config: cfg.clone(),
            condition: condition.label(),
            points,
            spearman_error_vs_size: spearman,
        },
    })
}

/// Summary of a single-condition run, for the `run` verb.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub resolved_config: ExperimentConfig,
    pub condition: String,
    #[serde(flatten)]
    pub aggregate: ConditionSummaryFlat,
}

/// Same fields as [`ConditionSummary`] minus the label (flattened into
/// [`RunSummary`]).
#[derive(Debug, Clone, Serialize)]
pub struct ConditionSummaryFlat {
    pub time_avg_error_pct_per_rep: Vec<f64>,
    pub final_step_error_pct_per_rep: Vec<f64>,
    pub mean_time_avg_error_pct: f64,
    pub std_time_avg_error_pct: f64,
    pub mean_final_step_error_pct: f64,
    pub mean_rendezvous_per_step: f64,
    pub non_monotone_inversions: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas_per_rep: Option<Vec<Vec<f64>>>,
}

/// Runs the config's single `scheme` across all repetitions.
pub fn run_single(cfg: &ExperimentConfig) -> Result<(Vec<RunMetrics>, RunSummary)> {
    let condition = Condition::parse(&cfg.scheme)?;
    let metrics = run_condition_all_reps(cfg, &condition)?;
    let s = summarize_condition(&condition.label(), &metrics);
    let summary = RunSummary {
        resolved_config: cfg.clone(),
        condition: s.condition,
        aggregate: ConditionSummaryFlat {
            time_avg_error_pct_per_rep: s.time_avg_error_pct_per_rep,
            final_step_error_pct_per_rep: s.final_step_error_pct_per_rep,
            mean_time_avg_error_pct: s.mean_time_avg_error_pct,
            std_time_avg_error_pct: s.std_time_avg_error_pct,
            mean_final_step_error_pct: s.mean_final_step_error_pct,
            mean_rendezvous_per_step: s.mean_rendezvous_per_step,
            non_monotone_inversions: s.non_monotone_inversions,
            lambdas_per_rep: s.lambdas_per_rep,
        },
    };
    Ok((metrics, summary))
}

/// Per-sensor tuning diagnostics, for the `tune-lambda` verb.
#[derive(Debug, Clone, Serialize)]
pub struct TuneSummary {
    pub resolved_config: ExperimentConfig,
    pub repetition: u32,
    pub sensors: Vec<SensorTune>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensorTune {
    pub sensor: usize,
    pub lambda: f64,
    pub objective: f64,
    /// Objective of the same trace at lambda = 0 (uniform weights).
    pub objective_at_zero: f64,
}

/// Tunes decay constants for repetition 0 and reports each sensor's result
/// next to the uniform-weights objective on the same trace.
pub fn tune_report(cfg: &ExperimentConfig) -> Result<TuneSummary> {
    init_parallelism();
    let rep = 0u32;
    let rep_seed = rng::derive_seed(cfg.seed, rep as u64);
    let sensors = build_sensors(cfg, rep_seed)?;
    let tuned = tune_lambdas(cfg, rep_seed, &sensors)?;
    let mut rows = Vec::with_capacity(sensors.len());
    for (sensor, result) in sensors.iter().zip(&tuned) {
        let trace = training_trace(cfg, sensor, rep_seed)?;
        let at_zero = lambda_objective(&trace, 0.0, cfg.degree, cfg.x_max())?;
        rows.push(SensorTune {
            sensor: sensor.id,
            lambda: result.lambda,
            objective: result.objective,
            objective_at_zero: at_zero,
        });
    }
    Ok(TuneSummary {
        resolved_config: cfg.clone(),
        repetition: rep,
        sensors: rows,
    })
}
