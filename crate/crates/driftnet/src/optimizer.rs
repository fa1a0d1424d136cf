//! Offline tuning of the exponential decay constant lambda by simulated
//! annealing against a known-stimuli training trace.
//!
//! The objective replays the trace chronologically: at each sample it refits
//! the drift parameters on everything seen so far (exponential weights at the
//! candidate lambda), inverts the next response, and scores the relative
//! error against the known stimulus.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calibration::{fit_wls, WeightScheme};
use crate::error::{Error, Result};
use crate::sensor::{invert_response, CalibrationTuple};

/// Known stimuli and the recorded raw responses of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    /// (concentration, step) pairs, timestamps strictly increasing.
    pub stimuli: Vec<(f64, u64)>,
    /// Raw outputs, one per stimulus.
    pub responses: Vec<f64>,
}

impl TrainingTrace {
    pub fn new(stimuli: Vec<(f64, u64)>, responses: Vec<f64>) -> Result<Self> {
        if stimuli.len() != responses.len() {
            return Err(Error::Config(format!(
                "trace lengths differ: {} stimuli vs {} responses",
                stimuli.len(),
                responses.len()
            )));
        }
        if stimuli.windows(2).any(|w| w[0].1 >= w[1].1) {
            return Err(Error::Config(
                "trace timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { stimuli, responses })
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }
}

/// Simulated-annealing schedule and search box for lambda.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealingSchedule {
    pub initial_temp: f64,
    /// Geometric cooling factor per iteration, in (0, 1).
    pub cooling_rate: f64,
    pub iterations: u32,
    /// Standard deviation of the Gaussian proposal.
    pub proposal_sigma: f64,
    pub lambda_bounds: (f64, f64),
    /// Starting point of the chain.
    pub initial_lambda: f64,
}

impl AnnealingSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(Error::Config(format!(
                "cooling rate must lie in (0, 1), got {}",
                self.cooling_rate
            )));
        }
        if !(self.proposal_sigma > 0.0) {
            return Err(Error::Config(format!(
                "proposal sigma must be positive, got {}",
                self.proposal_sigma
            )));
        }
        let (lo, hi) = self.lambda_bounds;
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::Config(format!(
                "lambda bounds must satisfy 0 <= min < max, got ({lo}, {hi})"
            )));
        }
        if !(self.initial_lambda >= lo && self.initial_lambda <= hi) {
            return Err(Error::Config(format!(
                "initial lambda {} outside bounds ({lo}, {hi})",
                self.initial_lambda
            )));
        }
        if !(self.initial_temp > 0.0) {
            return Err(Error::Config(format!(
                "initial temperature must be positive, got {}",
                self.initial_temp
            )));
        }
        Ok(())
    }
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        Self {
            initial_temp: 1.0,
            cooling_rate: 0.95,
            iterations: 500,
            proposal_sigma: 0.01,
            lambda_bounds: (0.0, 1.0),
            initial_lambda: 0.01,
        }
    }
}

/// Mean relative prediction error of the trace replay for a fixed lambda.
///
/// For every index k >= degree+1, fits on the first k tuples with
/// exponential weights evaluated at the k-th timestamp, inverts the k-th
/// response through the fit, and accumulates |xhat - x| / x.
pub fn lambda_objective(
    trace: &TrainingTrace,
    lambda: f64,
    degree: usize,
    x_max: f64,
) -> Result<f64> {
    if trace.len() < degree + 2 {
        return Err(Error::Config(format!(
            "training trace needs at least {} samples, got {}",
            degree + 2,
            trace.len()
        )));
    }
    let tuples: Vec<CalibrationTuple> = trace
        .stimuli
        .iter()
        .zip(&trace.responses)
        .map(|(&(x, t), &y)| CalibrationTuple {
            raw: y,
            estimate: x,
            time: t,
        })
        .collect();

    let mut total = 0.0;
    let mut count = 0usize;
    for k in (degree + 1)..tuples.len() {
        let now = tuples[k].time;
        let params = fit_wls(
            &tuples[..k],
            WeightScheme::Exponential { lambda },
            now,
            degree,
        )?;
        let predicted = invert_response(&params, trace.responses[k], x_max).value;
        let stimulus = trace.stimuli[k].0;
        total += (predicted - stimulus).abs() / stimulus;
        count += 1;
    }
    Ok(total / count as f64)
}

/// Outcome of one annealing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SaResult {
    /// Best lambda found.
    pub lambda: f64,
    /// Objective at the best lambda.
    pub objective: f64,
    /// Best-ever objective after each iteration.
    pub best_trace: Vec<f64>,
    /// Whether a strictly worse proposal was accepted at each iteration.
    pub accepted_worse: Vec<bool>,
}

/// Minimizes an arbitrary scalar objective over the schedule's bounds with
/// reflected Gaussian proposals and geometric cooling. Deterministic for a
/// given seed; returns the best-ever point.
pub fn anneal<F>(objective: F, schedule: &AnnealingSchedule, seed: u64) -> Result<SaResult>
where
    F: Fn(f64) -> Result<f64>,
{
    schedule.validate()?;
    let (lo, hi) = schedule.lambda_bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proposal = Normal::new(0.0, schedule.proposal_sigma)
        .map_err(|e| Error::Config(format!("invalid proposal distribution: {e}")))?;

    let mut current = schedule.initial_lambda;
    let mut current_obj = objective(current)?;
    let mut best = current;
    let mut best_obj = current_obj;
    let mut temperature = schedule.initial_temp;
    let mut best_trace = Vec::with_capacity(schedule.iterations as usize);
    let mut accepted_worse = Vec::with_capacity(schedule.iterations as usize);

    for _ in 0..schedule.iterations {
        let candidate = reflect_into(current + proposal.sample(&mut rng), lo, hi);
        let candidate_obj = objective(candidate)?;
        let delta = candidate_obj - current_obj;
        let accept = if delta <= 0.0 {
            true
        } else {
            rng.random::<f64>() < (-delta / temperature).exp()
        };
        accepted_worse.push(accept && delta > 0.0);
        if accept {
            current = candidate;
            current_obj = candidate_obj;
            if current_obj < best_obj {
                best = current;
                best_obj = current_obj;
            }
        }
        best_trace.push(best_obj);
        temperature *= schedule.cooling_rate;
    }

    Ok(SaResult {
        lambda: best,
        objective: best_obj,
        best_trace,
        accepted_worse,
    })
}

/// Tunes lambda for one training trace.
pub fn optimize_lambda(
    trace: &TrainingTrace,
    schedule: &AnnealingSchedule,
    seed: u64,
    degree: usize,
    x_max: f64,
) -> Result<SaResult> {
    anneal(
        |lambda| lambda_objective(trace, lambda, degree, x_max),
        schedule,
        seed,
    )
}

/// Reflects a proposal back into [lo, hi], preserving proposal symmetry at
/// the edges. Falls back to clamping if the value is pathologically far out.
fn reflect_into(mut x: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..64 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
    x.clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{measure, true_params_at, DriftParams};
    use rand::Rng;

    fn drifting_trace(alpha: f64, steps: u64, seed: u64) -> TrainingTrace {
        let initial = DriftParams::new(vec![0.8, 2.4, 1.3]).unwrap();
        let rates = vec![alpha; 3];
        let mut rng = crate::rng::stream_rng(seed, 0);
        let mut stimuli = Vec::new();
        let mut responses = Vec::new();
        for t in 1..=steps {
            let x = (1.0 - rng.random::<f64>()) * 100.0;
            stimuli.push((x, t));
            responses.push(measure(&true_params_at(&initial, &rates, t), x));
        }
        TrainingTrace::new(stimuli, responses).unwrap()
    }

    #[test]
    fn drift_free_trace_scores_near_zero_for_any_lambda() {
        let trace = drifting_trace(0.0, 60, 3);
        for lambda in [0.0, 0.01, 0.2, 1.0] {
            let obj = lambda_objective(&trace, lambda, 2, 100.0).unwrap();
            assert!(obj < 1e-6, "lambda {lambda} gave objective {obj}");
        }
    }

    #[test]
    fn fast_drift_prefers_decay_over_uniform() {
        let trace = drifting_trace(0.01, 120, 8);
        let at_decay = lambda_objective(&trace, 0.05, 2, 100.0).unwrap();
        let at_zero = lambda_objective(&trace, 0.0, 2, 100.0).unwrap();
        assert!(
            at_decay < at_zero,
            "expected decay to win: {at_decay} vs {at_zero}"
        );
    }

    #[test]
    fn short_traces_are_rejected() {
        let trace = TrainingTrace::new(vec![(1.0, 1), (2.0, 2), (3.0, 3)], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(lambda_objective(&trace, 0.1, 2, 100.0).is_err());
    }

    #[test]
    fn non_increasing_timestamps_are_rejected() {
        assert!(TrainingTrace::new(vec![(1.0, 5), (2.0, 5)], vec![1.0, 2.0]).is_err());
        assert!(TrainingTrace::new(vec![(1.0, 5)], vec![1.0, 2.0]).is_err());
    }

    /// Independent replay of the objective that fits via explicit normal
    /// equations instead of the QR route.
    fn objective_via_normal_equations(trace: &TrainingTrace, lambda: f64, degree: usize, x_max: f64) -> f64 {
        let n = degree + 1;
        let mut total = 0.0;
        let mut count = 0usize;
        for k in (degree + 1)..trace.len() {
            let now = trace.stimuli[k].1;
            let mut m = vec![vec![0.0f64; n + 1]; n];
            for idx in 0..k {
                let (x, t) = trace.stimuli[idx];
                let y = trace.responses[idx];
                let w = (-lambda * (now - t) as f64).exp();
                for i in 0..n {
                    for j in 0..n {
                        m[i][j] += w * x.powi((i + j) as i32);
                    }
                    m[i][n] += w * x.powi(i as i32) * y;
                }
            }
            for col in 0..n {
                let pivot = (col..n)
                    .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                    .unwrap();
                m.swap(col, pivot);
                let p = m[col][col];
                for kk in col..=n {
                    m[col][kk] /= p;
                }
                for row in 0..n {
                    if row != col {
                        let f = m[row][col];
                        for kk in col..=n {
                            m[row][kk] -= f * m[col][kk];
                        }
                    }
                }
            }
            let coeffs: Vec<f64> = (0..n).map(|i| m[i][n]).collect();
            let params = DriftParams::new(coeffs).unwrap();
            let predicted = invert_response(&params, trace.responses[k], x_max).value;
            let stimulus = trace.stimuli[k].0;
            total += (predicted - stimulus).abs() / stimulus;
            count += 1;
        }
        total / count as f64
    }

    #[test]
    fn objective_agrees_with_normal_equation_replay() {
        let trace = drifting_trace(0.004, 80, 21);
        for lambda in [0.0, 0.02, 0.3] {
            let got = lambda_objective(&trace, lambda, 2, 100.0).unwrap();
            let oracle = objective_via_normal_equations(&trace, lambda, 2, 100.0);
            assert!(
                (got - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
                "lambda {lambda}: {got} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn zero_iterations_returns_the_initial_point() {
        let trace = drifting_trace(0.002, 60, 4);
        let schedule = AnnealingSchedule {
            iterations: 0,
            ..Default::default()
        };
        let result = optimize_lambda(&trace, &schedule, 1, 2, 100.0).unwrap();
        assert_eq!(result.lambda, 0.01);
        let initial_obj = lambda_objective(&trace, 0.01, 2, 100.0).unwrap();
        assert_eq!(result.objective, initial_obj);
    }

    #[test]
    fn annealing_never_loses_to_its_starting_point() {
        let trace = drifting_trace(0.006, 80, 5);
        let schedule = AnnealingSchedule {
            iterations: 100,
            ..Default::default()
        };
        let result = optimize_lambda(&trace, &schedule, 2, 2, 100.0).unwrap();
        let initial_obj = lambda_objective(&trace, schedule.initial_lambda, 2, 100.0).unwrap();
        assert!(result.objective <= initial_obj);
        assert!(result.lambda >= 0.0 && result.lambda <= 1.0);
    }

    #[test]
    fn best_trace_is_non_increasing() {
        let trace = drifting_trace(0.005, 70, 6);
        let schedule = AnnealingSchedule {
            iterations: 150,
            ..Default::default()
        };
        let result = optimize_lambda(&trace, &schedule, 3, 2, 100.0).unwrap();
        assert_eq!(result.best_trace.len(), 150);
        for w in result.best_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn cold_chains_stop_accepting_worse_moves() {
        // Quadratic bowl; plenty of worse proposals available everywhere.
        let schedule = AnnealingSchedule {
            iterations: 400,
            initial_temp: 1.0,
            cooling_rate: 0.9,
            proposal_sigma: 0.05,
            lambda_bounds: (0.0, 1.0),
            initial_lambda: 0.9,
        };
        let result = anneal(|x| Ok((x - 0.3) * (x - 0.3)), &schedule, 11).unwrap();
        let last_decile = &result.accepted_worse[360..];
        let worse_accepts = last_decile.iter().filter(|&&b| b).count();
        assert_eq!(
            worse_accepts, 0,
            "cold chain still accepted {worse_accepts} worse proposals"
        );
    }

    #[test]
    fn proposals_are_reflected_into_bounds() {
        assert_eq!(reflect_into(0.5, 0.0, 1.0), 0.5);
        assert_eq!(reflect_into(-0.2, 0.0, 1.0), 0.2);
        assert_eq!(reflect_into(1.3, 0.0, 1.0), 0.7);
        let x = reflect_into(5.0, 0.0, 1.0);
        assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let mut s = AnnealingSchedule::default();
        s.cooling_rate = 1.5;
        assert!(s.validate().is_err());
        let mut s = AnnealingSchedule::default();
        s.lambda_bounds = (0.5, 0.1);
        assert!(s.validate().is_err());
        let mut s = AnnealingSchedule::default();
        s.initial_lambda = 2.0;
        assert!(s.validate().is_err());
    }
}
