//! Drifting sensor response model.
//!
//! A sensor's raw output is a polynomial in the true concentration,
//! y = sum_j d_j(t) x^j, whose coefficients grow linearly in time:
//! d_j(t) = d_j(0) * (1 + alpha_j * t). Calibrated estimates are obtained by
//! inverting the currently-estimated polynomial on the physical range.

use crate::error::{Error, Result};

/// Polynomial response coefficients d_0..d_r, lowest order first.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftParams {
    coeffs: Vec<f64>,
}

impl DriftParams {
    /// Requires at least degree 1 (two coefficients).
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::Config(format!(
                "drift polynomial needs degree >= 1, got {} coefficients",
                coeffs.len()
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// Drift coefficients at step `t`: d_j(t) = d_j(0) * (1 + alpha_j * t).
pub fn true_params_at(initial: &DriftParams, alpha: &[f64], t: u64) -> DriftParams {
    debug_assert_eq!(initial.coeffs.len(), alpha.len());
    let t = t as f64;
    DriftParams {
        coeffs: initial
            .coeffs
            .iter()
            .zip(alpha)
            .map(|(&d0, &a)| d0 * (1.0 + a * t))
            .collect(),
    }
}

/// Raw sensor output for ground truth `x` (Horner evaluation).
pub fn measure(params: &DriftParams, x: f64) -> f64 {
    params
        .coeffs
        .iter()
        .rev()
        .fold(0.0, |acc, &c| x.mul_add(acc, c))
}

/// Result of inverting the estimated response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    /// Calibrated concentration estimate in [0, x_max].
    pub value: f64,
    /// Set when the response was not monotone on [0, x_max] and the
    /// grid-scan fallback was used.
    pub non_monotone: bool,
}

const BISECTION_TOL: f64 = 1e-9;
const FALLBACK_GRID_POINTS: usize = 10_000;

/// Calibrated estimate: the x in [0, x_max] whose predicted response is
/// closest to `y`. For a response that is monotone increasing on the range
/// this is the unique root, found by bisection to 1e-9; readings outside the
/// reachable interval clamp to the nearest endpoint. Non-monotone responses
/// fall back to a dense grid scan with local refinement and raise the
/// diagnostic flag.
pub fn invert_response(params: &DriftParams, y: f64, x_max: f64) -> Inversion {
    debug_assert!(x_max > 0.0);
    let f_lo = measure(params, 0.0);
    let f_hi = measure(params, x_max);

    if is_monotone_increasing(params, x_max) {
        if y <= f_lo {
            return Inversion {
                value: 0.0,
                non_monotone: false,
            };
        }
        if y >= f_hi {
            return Inversion {
                value: x_max,
                non_monotone: false,
            };
        }
        return Inversion {
            value: bisect_root(params, y, 0.0, x_max),
            non_monotone: false,
        };
    }

    Inversion {
        value: grid_scan_invert(params, y, x_max),
        non_monotone: true,
    }
}

/// True when the derivative is non-negative across [0, x_max] and the
/// response actually rises over the interval. The derivative of a quadratic
/// is linear, so endpoint checks are exact there; higher degrees are sampled.
pub fn response_is_monotone_increasing(params: &DriftParams, x_max: f64) -> bool {
    is_monotone_increasing(params, x_max)
}

fn is_monotone_increasing(params: &DriftParams, x_max: f64) -> bool {
    let deriv: Vec<f64> = params
        .coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, &c)| j as f64 * c)
        .collect();
    let deriv_at = |x: f64| deriv.iter().rev().fold(0.0, |acc: f64, &c| x.mul_add(acc, c));

    let samples = if deriv.len() <= 2 { 1 } else { 256 };
    for i in 0..=samples {
        let x = x_max * i as f64 / samples as f64;
        if deriv_at(x) < 0.0 {
            return false;
        }
    }
    measure(params, x_max) >= measure(params, 0.0)
}

/// Bisection on f(x) - y for increasing f with f(0) < y < f(x_max).
fn bisect_root(params: &DriftParams, y: f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // interval no longer representable
        }
        if measure(params, mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fallback for non-monotone responses: scan a dense grid for the best
/// |f(x) - y|, then refine inside the bracketing segment, bisecting if the
/// residual changes sign and ternary-searching otherwise.
fn grid_scan_invert(params: &DriftParams, y: f64, x_max: f64) -> f64 {
    let step = x_max / FALLBACK_GRID_POINTS as f64;
    let mut best_i = 0usize;
    let mut best_err = f64::INFINITY;
    for i in 0..=FALLBACK_GRID_POINTS {
        let x = step * i as f64;
        let err = (measure(params, x) - y).abs();
        if err < best_err {
            best_err = err;
            best_i = i;
        }
    }
    let lo = step * best_i.saturating_sub(1) as f64;
    let hi = (step * (best_i + 1) as f64).min(x_max);

    // Prefer a sign-change bracket; it pins an exact crossing.
    let g = |x: f64| measure(params, x) - y;
    let mid = step * best_i as f64;
    for (a, b) in [(lo, mid), (mid, hi)] {
        if g(a) == 0.0 {
            return a;
        }
        if g(a) * g(b) < 0.0 {
            let (mut a, mut b) = (a, b);
            while b - a > BISECTION_TOL {
                let m = 0.5 * (a + b);
                if g(a) * g(m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            return 0.5 * (a + b);
        }
    }

    // No crossing: ternary search on |f - y| over the bracket.
    let (mut a, mut b) = (lo, hi);
    while b - a > BISECTION_TOL {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if g(m1).abs() <= g(m2).abs() {
            b = m2;
        } else {
            a = m1;
        }
    }
    0.5 * (a + b)
}

/// One row of a sensor's calibration table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTuple {
    /// Raw sensor output y(t_k).
    pub raw: f64,
    /// Consensus estimate of the ground truth at t_k.
    pub estimate: f64,
    /// Step index t_k.
    pub time: u64,
}

/// Full per-sensor state: identity, true drift law, current estimate of the
/// response, calibration history, and the exponential decay constant used by
/// the optimized weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub id: usize,
    pub initial_params: DriftParams,
    /// Per-coefficient drift rates alpha_j (per step).
    pub alpha: Vec<f64>,
    pub estimated_params: DriftParams,
    pub table: Vec<CalibrationTuple>,
    /// Step of the most recent successful recalibration.
    pub last_calibration: u64,
    /// Decay constant for exponential tuple weights.
    pub lambda: f64,
}

impl SensorState {
    /// A freshly deployed sensor starts perfectly calibrated: the estimated
    /// response equals the true response at t = 0.
    pub fn new(id: usize, initial_params: DriftParams, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != initial_params.coeffs().len() {
            return Err(Error::Config(format!(
                "alpha length {} does not match {} coefficients",
                alpha.len(),
                initial_params.coeffs().len()
            )));
        }
        let estimated_params = initial_params.clone();
        Ok(Self {
            id,
            initial_params,
            alpha,
            estimated_params,
            table: Vec::new(),
            last_calibration: 0,
            lambda: 0.0,
        })
    }

    pub fn true_params(&self, t: u64) -> DriftParams {
        true_params_at(&self.initial_params, &self.alpha, t)
    }

    /// Raw output when exposed to concentration `x` at step `t`.
    pub fn read_raw(&self, x: f64, t: u64) -> f64 {
        measure(&self.true_params(t), x)
    }

    /// Calibrated estimate of the concentration behind raw reading `y`.
    pub fn calibrated_estimate(&self, y: f64, x_max: f64) -> Inversion {
        invert_response(&self.estimated_params, y, x_max)
    }

    /// Seeds the table with factory calibration points: samples of the
    /// deployment-time true response, timestamped at the deployment step.
    /// Gives every fit a full-range anchor that age weighting then decays
    /// in favor of field data.
    pub fn seed_factory_table(&mut self, points: usize, x_max: f64) {
        let params = self.true_params(0);
        for i in 1..=points {
            let x = x_max * i as f64 / points as f64;
            self.table.push(CalibrationTuple {
                raw: measure(&params, x),
                estimate: x,
                time: 0,
            });
        }
    }

    /// Appends a tuple, evicting the oldest entry when a cap is set.
    /// Timestamps never decrease (factory seeds share the deployment step;
    /// field tuples arrive at most one per step).
    pub fn push_tuple(&mut self, tuple: CalibrationTuple, cap: Option<usize>) {
        debug_assert!(
            self.table.last().map_or(true, |last| last.time <= tuple.time),
            "table timestamps must be non-decreasing"
        );
        self.table.push(tuple);
        if let Some(cap) = cap {
            if cap > 0 && self.table.len() > cap {
                let excess = self.table.len() - cap;
                self.table.drain(..excess);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn quadratic(c0: f64, c1: f64, c2: f64) -> DriftParams {
        DriftParams::new(vec![c0, c1, c2]).unwrap()
    }

    #[test]
    fn params_at_zero_are_the_initial_params() {
        let p = quadratic(1.0, 2.5, 1.5);
        assert_eq!(true_params_at(&p, &[0.002; 3], 0), p);
    }

    #[test]
    fn paper_drift_rate_triples_coefficients_at_step_1000() {
        // d(0) = 2, alpha = 0.002 -> d(1000) = 2 * (1 + 2) = 6.
        let p = quadratic(2.0, 2.0, 2.0);
        let drifted = true_params_at(&p, &[0.002; 3], 1000);
        for &c in drifted.coeffs() {
            assert!((c - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_alpha_means_no_drift() {
        let p = quadratic(0.5, 2.2, 1.1);
        assert_eq!(true_params_at(&p, &[0.0; 3], 12345), p);
    }

    #[test]
    fn drift_is_linear_in_time() {
        // Closed form: d(t1) + d(t2) - d(0) = d(t1 + t2) coefficient-wise.
        let p = quadratic(0.7, 2.9, 1.8);
        let alpha = [0.002, 0.001, 0.004];
        for (t1, t2) in [(10u64, 20u64), (100, 900), (0, 500)] {
            let lhs: Vec<f64> = true_params_at(&p, &alpha, t1)
                .coeffs()
                .iter()
                .zip(true_params_at(&p, &alpha, t2).coeffs())
                .zip(p.coeffs())
                .map(|((&a, &b), &c)| a + b - c)
                .collect();
            let rhs = true_params_at(&p, &alpha, t1 + t2);
            for (l, r) in lhs.iter().zip(rhs.coeffs()) {
                assert!((l - r).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_sensor_reads_back_the_input() {
        let p = DriftParams::new(vec![0.0, 1.0]).unwrap();
        for x in [0.0, 1.0, 3.5, 99.0] {
            assert_eq!(measure(&p, x), x);
        }
    }

    #[test]
    fn quadratic_evaluation_matches_direct_sum() {
        // 1 + 2.5*2 + 1.5*4 = 12
        assert!((measure(&quadratic(1.0, 2.5, 1.5), 2.0) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn intercept_at_zero_input() {
        assert_eq!(measure(&quadratic(1.3, 2.5, 1.5), 0.0), 1.3);
    }

    #[test]
    fn raw_output_grows_with_drift_for_positive_coefficients() {
        let p = quadratic(1.0, 2.5, 1.5);
        let alpha = [0.002; 3];
        let x = 40.0;
        let mut prev = measure(&true_params_at(&p, &alpha, 0), x);
        for t in [1u64, 10, 100, 1000] {
            let cur = measure(&true_params_at(&p, &alpha, t), x);
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn identity_inversion_returns_the_reading() {
        let p = DriftParams::new(vec![0.0, 1.0, 0.0]).unwrap();
        let inv = invert_response(&p, 7.0, 100.0);
        assert!(!inv.non_monotone);
        assert!((inv.value - 7.0).abs() < 1e-6);
    }

    #[test]
    fn readings_below_range_clamp_to_zero() {
        let p = quadratic(5.0, 2.0, 1.0);
        let inv = invert_response(&p, 1.0, 100.0);
        assert_eq!(inv.value, 0.0);
        assert!(!inv.non_monotone);
    }

    #[test]
    fn readings_above_range_clamp_to_x_max() {
        let p = quadratic(0.0, 1.0, 0.0);
        let inv = invert_response(&p, 1e9, 100.0);
        assert_eq!(inv.value, 100.0);
    }

    #[test]
    fn round_trip_on_random_positive_quadratics() {
        let mut rng = crate::rng::stream_rng(17, 0);
        for _ in 0..1000 {
            let p = quadratic(
                rng.random::<f64>() * 1.5,
                2.0 + rng.random::<f64>(),
                1.0 + rng.random::<f64>(),
            );
            let x = rng.random::<f64>() * 100.0;
            let inv = invert_response(&p, measure(&p, x), 100.0);
            assert!(
                (inv.value - x).abs() < 1e-6,
                "round trip failed: x={x}, got {}",
                inv.value
            );
        }
    }

    #[test]
    fn decreasing_response_takes_the_fallback_path() {
        let p = DriftParams::new(vec![10.0, -1.0]).unwrap();
        let inv = invert_response(&p, 5.0, 10.0);
        assert!(inv.non_monotone);
        assert!((inv.value - 5.0).abs() < 1e-6);
    }

    #[test]
    fn non_monotone_quadratic_finds_nearest_match() {
        // f(x) = (x - 5)^2 dips at x = 5; y = 0 is attained there exactly.
        let p = DriftParams::new(vec![25.0, -10.0, 1.0]).unwrap();
        let inv = invert_response(&p, 0.0, 10.0);
        assert!(inv.non_monotone);
        assert!((inv.value - 5.0).abs() < 1e-4);
    }

    #[test]
    fn table_cap_evicts_oldest_tuples() {
        let mut s = SensorState::new(0, quadratic(1.0, 2.5, 1.5), vec![0.002; 3]).unwrap();
        for t in 1..=10u64 {
            s.push_tuple(
                CalibrationTuple {
                    raw: t as f64,
                    estimate: t as f64,
                    time: t,
                },
                Some(4),
            );
        }
        assert_eq!(s.table.len(), 4);
        assert_eq!(s.table.first().unwrap().time, 7);
        assert_eq!(s.table.last().unwrap().time, 10);
    }

    #[test]
    fn new_sensor_starts_calibrated() {
        let s = SensorState::new(3, quadratic(1.0, 2.5, 1.5), vec![0.002; 3]).unwrap();
        assert_eq!(s.estimated_params, s.initial_params);
        assert_eq!(s.last_calibration, 0);
        assert!(s.table.is_empty());
    }

    #[test]
    fn mismatched_alpha_length_is_a_config_error() {
        assert!(SensorState::new(0, quadratic(1.0, 2.5, 1.5), vec![0.002; 2]).is_err());
    }
}
