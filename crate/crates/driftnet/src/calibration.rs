//! Rendezvous-driven recalibration: consensus ground-truth estimation,
//! calibration-table maintenance, and weighted least-squares re-fitting of
//! the drift parameters under pluggable age-weighting schemes.

use crate::error::{Error, Result};
use crate::mobility::RendezvousGroup;
use crate::sensor::{
    invert_response, response_is_monotone_increasing, CalibrationTuple, DriftParams, SensorState,
};

/// How calibration tuples are weighted by age in the WLS objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    /// All tuples weigh 1 (identical to `Exponential { lambda: 0 }`).
    Uniform,
    /// Weight 1 / (age + 1), so the newest tuple weighs 1.
    ReciprocalAge,
    /// Weight exp(-lambda * age).
    Exponential { lambda: f64 },
}

/// Weight of a tuple recorded at `t_k` when refitting at `now`. Always > 0
/// (exponential weights may underflow to zero for very old tuples, which
/// simply drops them from the fit).
pub fn tuple_weight(scheme: WeightScheme, now: u64, t_k: u64) -> f64 {
    debug_assert!(t_k <= now, "tuple from the future: {t_k} > {now}");
    let age = (now - t_k) as f64;
    match scheme {
        WeightScheme::Uniform => 1.0,
        WeightScheme::ReciprocalAge => 1.0 / (age + 1.0),
        WeightScheme::Exponential { lambda } => (-lambda * age).exp(),
    }
}

/// Per-neighbor staleness weighting used in the consensus estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StalenessWeighting {
    /// rho_j proportional to 1 / (now - tau_j + 1).
    Reciprocal,
    /// rho_j proportional to exp(-lambda * (now - tau_j)).
    Exponential { lambda: f64 },
}

/// Calibrated estimates from the members of one rendezvous group, each
/// paired with that member's last recalibration step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusInput {
    /// (calibrated estimate, last calibration step) per member.
    pub estimates: Vec<(f64, u64)>,
    /// Current step.
    pub now: u64,
}

/// Staleness-weighted average of the members' calibrated estimates with the
/// reciprocal weighting (weights are normalized to sum to one).
pub fn consensus_estimate(input: &ConsensusInput) -> f64 {
    consensus_estimate_weighted(input, StalenessWeighting::Reciprocal)
}

/// Consensus under an explicit staleness weighting.
pub fn consensus_estimate_weighted(input: &ConsensusInput, weighting: StalenessWeighting) -> f64 {
    assert!(!input.estimates.is_empty(), "consensus over empty group");
    let mut weighted_sum = 0.0;
    let mut weight_sum = 0.0;
    for &(estimate, last_calibration) in &input.estimates {
        debug_assert!(last_calibration <= input.now);
        let age = (input.now - last_calibration) as f64;
        let w = match weighting {
            StalenessWeighting::Reciprocal => 1.0 / (age + 1.0),
            StalenessWeighting::Exponential { lambda } => (-lambda * age).exp(),
        };
        weighted_sum += w * estimate;
        weight_sum += w;
    }
    weighted_sum / weight_sum
}

const RIDGE: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

/// Fits drift parameters by weighted least squares over the calibration
/// table: gamma = argmin sum_k w_k (sum_j gamma_j xhat_k^j - y_k)^2.
///
/// The model is linear in gamma, so this is a weighted linear least-squares
/// solve: Householder QR on the weighted (and column-equilibrated) design
/// matrix, falling back to ridge-regularized normal equations
/// (+1e-10 on the diagonal) when the design is rank-deficient.
///
/// Fails with `InsufficientData` when the table has fewer than degree+1
/// tuples or fewer than degree+1 distinct estimate values.
pub fn fit_wls(
    table: &[CalibrationTuple],
    scheme: WeightScheme,
    now: u64,
    degree: usize,
) -> Result<DriftParams> {
    let n = degree + 1;
    if table.len() < n {
        return Err(Error::InsufficientData {
            have: table.len(),
            need: n,
        });
    }
    let mut distinct: Vec<f64> = table.iter().map(|t| t.estimate).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < n {
        return Err(Error::InsufficientData {
            have: distinct.len(),
            need: n,
        });
    }

    let xs: Vec<f64> = table.iter().map(|t| t.estimate).collect();
    let ys: Vec<f64> = table.iter().map(|t| t.raw).collect();
    let ws: Vec<f64> = table
        .iter()
        .map(|t| tuple_weight(scheme, now, t.time))
        .collect();
    let coeffs = wls_solve(&xs, &ys, &ws, degree)?;
    DriftParams::new(coeffs)
}

/// Weighted polynomial least squares on raw samples.
fn wls_solve(xs: &[f64], ys: &[f64], ws: &[f64], degree: usize) -> Result<Vec<f64>> {
    let p = xs.len();
    let n = degree + 1;

    // Weighted design matrix (row-major) and right-hand side.
    let mut a = vec![0.0f64; p * n];
    let mut b = vec![0.0f64; p];
    for i in 0..p {
        let sw = ws[i].sqrt();
        let mut pow = 1.0;
        for j in 0..n {
            a[i * n + j] = sw * pow;
            pow *= xs[i];
        }
        b[i] = sw * ys[i];
    }

    // Column equilibration keeps the Vandermonde columns comparable in
    // magnitude; the solution is rescaled afterwards.
    let mut scale = vec![1.0f64; n];
    for j in 0..n {
        let mut max_abs = 0.0f64;
        for i in 0..p {
            max_abs = max_abs.max(a[i * n + j].abs());
        }
        if max_abs > 0.0 {
            scale[j] = max_abs;
            for i in 0..p {
                a[i * n + j] /= max_abs;
            }
        }
    }

    match qr_least_squares(&mut a, &mut b, p, n) {
        Some(z) => Ok(z.iter().zip(&scale).map(|(&zj, &sj)| zj / sj).collect()),
        None => ridge_normal_solve(xs, ys, ws, degree),
    }
}

/// Householder QR least-squares solve of an in-place p x n system (p >= n).
/// Returns `None` when R is numerically rank-deficient.
fn qr_least_squares(a: &mut [f64], b: &mut [f64], p: usize, n: usize) -> Option<Vec<f64>> {
    let mut r_diag = vec![0.0f64; n];
    let mut v_head = vec![0.0f64; n];

    for j in 0..n {
        let mut norm_sq = 0.0;
        for i in j..p {
            norm_sq += a[i * n + j] * a[i * n + j];
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            r_diag[j] = 0.0;
            v_head[j] = 0.0;
            continue;
        }
        let pivot = a[j * n + j];
        let alpha = if pivot > 0.0 { -norm } else { norm };
        let vj = pivot - alpha;
        // v^T v = -2 * alpha * vj for this Householder construction.
        let beta = 2.0 / (-2.0 * alpha * vj);
        v_head[j] = vj;
        r_diag[j] = alpha;

        for k in (j + 1)..n {
            let mut dot = vj * a[j * n + k];
            for i in (j + 1)..p {
                dot += a[i * n + j] * a[i * n + k];
            }
            let s = beta * dot;
            a[j * n + k] -= s * vj;
            for i in (j + 1)..p {
                a[i * n + k] -= s * a[i * n + j];
            }
        }
        let mut dot = vj * b[j];
        for i in (j + 1)..p {
            dot += a[i * n + j] * b[i];
        }
        let s = beta * dot;
        b[j] -= s * vj;
        for i in (j + 1)..p {
            b[i] -= s * a[i * n + j];
        }
    }

    let max_diag = r_diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if max_diag == 0.0 || r_diag.iter().any(|d| d.abs() < RANK_TOL * max_diag) {
        return None;
    }

    // Back substitution on the upper-triangular system.
    let mut x = vec![0.0f64; n];
    for j in (0..n).rev() {
        let mut sum = b[j];
        for k in (j + 1)..n {
            sum -= a[j * n + k] * x[k];
        }
        x[j] = sum / r_diag[j];
    }
    Some(x)
}

/// Ridge fallback: solve (A^T W A + 1e-10 I) gamma = A^T W y by Gaussian
/// elimination with partial pivoting.
fn ridge_normal_solve(xs: &[f64], ys: &[f64], ws: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = degree + 1;
    let mut normal = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n];
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        let mut powers = vec![1.0f64; 2 * n - 1];
        for j in 1..powers.len() {
            powers[j] = powers[j - 1] * x;
        }
        for i in 0..n {
            for j in 0..n {
                normal[i * n + j] += w * powers[i + j];
            }
            rhs[i] += w * powers[i] * y;
        }
    }
    for i in 0..n {
        normal[i * n + i] += RIDGE;
    }

    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let mut pivot_row = col;
        for row in (col + 1)..n {
            if normal[row * n + col].abs() > normal[pivot_row * n + col].abs() {
                pivot_row = row;
            }
        }
        if normal[pivot_row * n + col] == 0.0 {
            return Err(Error::Numerical(
                "singular ridge-regularized normal system".into(),
            ));
        }
        if pivot_row != col {
            for k in 0..n {
                normal.swap(col * n + k, pivot_row * n + k);
            }
            rhs.swap(col, pivot_row);
        }
        for row in (col + 1)..n {
            let factor = normal[row * n + col] / normal[col * n + col];
            for k in col..n {
                normal[row * n + k] -= factor * normal[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut gamma = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = rhs[i];
        for k in (i + 1)..n {
            sum -= normal[i * n + k] * gamma[k];
        }
        gamma[i] = sum / normal[i * n + i];
    }
    if gamma.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite ridge solution".into()));
    }
    Ok(gamma)
}

/// How each group member picks its fit weights during a rendezvous.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitScheme {
    /// Every member uses the same scheme.
    Shared(WeightScheme),
    /// Every member uses exponential weights with its own decay constant.
    PerSensorExponential,
}

impl FitScheme {
    fn for_member(&self, sensor: &SensorState) -> WeightScheme {
        match *self {
            FitScheme::Shared(scheme) => scheme,
            FitScheme::PerSensorExponential => WeightScheme::Exponential {
                lambda: sensor.lambda,
            },
        }
    }
}

/// Knobs for the rendezvous update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Polynomial degree r of the fitted response.
    pub degree: usize,
    /// Upper bound of the physical concentration range used for inversion.
    pub x_max: f64,
    /// Calibration-table cap; `None` disables eviction.
    pub table_cap: Option<usize>,
    /// Staleness weighting for the consensus estimate.
    pub consensus: StalenessWeighting,
    /// Fraction of the physical range below which two estimates count as
    /// the same stimulus level for the refit trigger.
    pub usable_resolution: f64,
}

/// Number of estimate values distinguishable at the physical resolution.
///
/// A degree-r response that must be inverted over [0, x_max] cannot be
/// identified from estimates that all sit in one narrow band (sensors
/// parked far from the plume all reporting about zero, or a burst of
/// near-duplicate consensus values from one sustained encounter), so such
/// values count as a single usable stimulus level.
fn usable_levels(table: &[CalibrationTuple], opts: &CalibrationOptions) -> usize {
    let eps = opts.usable_resolution * opts.x_max;
    let mut values: Vec<f64> = table.iter().map(|t| t.estimate).collect();
    values.sort_by(f64::total_cmp);
    let mut levels = 1;
    let mut anchor = values[0];
    for &v in &values[1..] {
        if v - anchor > eps {
            levels += 1;
            anchor = v;
        }
    }
    levels
}

/// Applies one rendezvous: every member inverts its own raw reading, the
/// group forms a single staleness-weighted consensus, each member appends a
/// (raw, consensus, now) tuple, and members with enough usable data re-fit
/// their drift parameters and advance their last-calibration step. Members
/// without enough data keep their previous parameters (the tuple is still
/// recorded).
///
/// Returns the number of non-monotone inversion diagnostics raised.
pub fn rendezvous_update(
    group: &RendezvousGroup,
    sensors: &mut [SensorState],
    readings: &[f64],
    now: u64,
    fit: FitScheme,
    opts: &CalibrationOptions,
) -> Result<u64> {
    debug_assert!(group.member_ids.len() >= 2);
    let mut non_monotone = 0u64;

    let mut estimates = Vec::with_capacity(group.member_ids.len());
    for &id in &group.member_ids {
        let inv = invert_response(&sensors[id].estimated_params, readings[id], opts.x_max);
        if inv.non_monotone {
            non_monotone += 1;
        }
        estimates.push((inv.value, sensors[id].last_calibration));
    }
    let consensus = consensus_estimate_weighted(&ConsensusInput { estimates, now }, opts.consensus);

    for &id in &group.member_ids {
        sensors[id].push_tuple(
            CalibrationTuple {
                raw: readings[id],
                estimate: consensus,
                time: now,
            },
            opts.table_cap,
        );
        if usable_levels(&sensors[id].table, opts) < opts.degree + 1 {
            continue; // not enough distinguishable stimulus levels to refit
        }
        let scheme = fit.for_member(&sensors[id]);
        match fit_wls(&sensors[id].table, scheme, now, opts.degree) {
            Ok(params) if fit_is_physical(&params, opts.x_max) => {
                sensors[id].estimated_params = params;
                sensors[id].last_calibration = now;
            }
            Ok(_) | Err(Error::InsufficientData { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(non_monotone)
}

/// The true response family (non-negative coefficients, positive drift) is
/// monotone increasing with a non-negative intercept and leading term. A fit
/// that leaves this family failed on its table; accepting it would poison
/// the sensor's estimates and, through consensus, its neighbors'.
fn fit_is_physical(params: &DriftParams, x_max: f64) -> bool {
    let coeffs = params.coeffs();
    coeffs[0] >= 0.0
        && *coeffs.last().expect("non-empty coefficients") >= 0.0
        && response_is_monotone_increasing(params, x_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::measure;
    use rand::Rng;

    fn tuples_from(xs: &[f64], params: &DriftParams, start_time: u64) -> Vec<CalibrationTuple> {
        xs.iter()
            .enumerate()
            .map(|(k, &x)| CalibrationTuple {
                raw: measure(params, x),
                estimate: x,
                time: start_time + k as u64,
            })
            .collect()
    }

    #[test]
    fn exponential_with_zero_lambda_equals_uniform() {
        for age in [0u64, 1, 10, 1000] {
            let exp = tuple_weight(WeightScheme::Exponential { lambda: 0.0 }, 2000, 2000 - age);
            let uni = tuple_weight(WeightScheme::Uniform, 2000, 2000 - age);
            assert_eq!(exp, uni);
            assert_eq!(exp, 1.0);
        }
    }

    #[test]
    fn exponential_weight_matches_closed_form() {
        let w = tuple_weight(WeightScheme::Exponential { lambda: 0.01 }, 200, 100);
        assert!((w - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn reciprocal_age_zero_gives_unit_weight() {
        assert_eq!(tuple_weight(WeightScheme::ReciprocalAge, 50, 50), 1.0);
        assert!((tuple_weight(WeightScheme::ReciprocalAge, 59, 50) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn weights_never_increase_with_age() {
        let schemes = [
            WeightScheme::Uniform,
            WeightScheme::ReciprocalAge,
            WeightScheme::Exponential { lambda: 0.05 },
        ];
        for scheme in schemes {
            let mut prev = f64::INFINITY;
            for age in 0..200u64 {
                let w = tuple_weight(scheme, 1000, 1000 - age);
                assert!(w <= prev && w > 0.0);
                prev = w;
            }
        }
    }

    #[test]
    fn consecutive_exponential_weights_have_exact_ratio() {
        let lambda = 0.037;
        let scheme = WeightScheme::Exponential { lambda };
        for age in 0..50u64 {
            let ratio = tuple_weight(scheme, 1000, 1000 - age - 1) / tuple_weight(scheme, 1000, 1000 - age);
            assert!((ratio - (-lambda as f64).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_consensus_is_the_estimate_itself() {
        let input = ConsensusInput {
            estimates: vec![(42.0, 3)],
            now: 10,
        };
        assert_eq!(consensus_estimate(&input), 42.0);
    }

    #[test]
    fn equal_staleness_reduces_to_plain_mean() {
        let input = ConsensusInput {
            estimates: vec![(10.0, 7), (20.0, 7)],
            now: 7,
        };
        assert!((consensus_estimate(&input) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn fresher_members_dominate_the_consensus() {
        // Weights 1/(0+1) = 1 and 1/(9+1) = 0.1, so (10 + 2) / 1.1 = 120/11.
        let input = ConsensusInput {
            estimates: vec![(10.0, 100), (20.0, 91)],
            now: 100,
        };
        assert!((consensus_estimate(&input) - 120.0 / 11.0).abs() < 1e-9);
    }

    #[test]
    fn consensus_is_a_convex_combination() {
        let mut rng = crate::rng::stream_rng(5, 0);
        for _ in 0..200 {
            let m = rng.random_range(1..=6);
            let now = 500u64;
            let estimates: Vec<(f64, u64)> = (0..m)
                .map(|_| (rng.random::<f64>() * 100.0, rng.random_range(0..=now)))
                .collect();
            let lo = estimates.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
            let hi = estimates.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
            for weighting in [
                StalenessWeighting::Reciprocal,
                StalenessWeighting::Exponential { lambda: 0.02 },
            ] {
                let c = consensus_estimate_weighted(
                    &ConsensusInput {
                        estimates: estimates.clone(),
                        now,
                    },
                    weighting,
                );
                assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_tuples_are_interpolated_exactly() {
        let truth = DriftParams::new(vec![1.0, 2.5, 1.5]).unwrap();
        let table = tuples_from(&[1.0, 2.0, 3.0, 4.0], &truth, 1);
        for scheme in [
            WeightScheme::Uniform,
            WeightScheme::ReciprocalAge,
            WeightScheme::Exponential { lambda: 0.3 },
        ] {
            let fitted = fit_wls(&table, scheme, 10, 2).unwrap();
            for (got, want) in fitted.coeffs().iter().zip(truth.coeffs()) {
                assert!(
                    (got - want).abs() < 1e-9,
                    "{scheme:?}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn under_determined_table_is_rejected() {
        let truth = DriftParams::new(vec![1.0, 2.5, 1.5]).unwrap();
        let table = tuples_from(&[1.0, 2.0], &truth, 1);
        match fit_wls(&table, WeightScheme::Uniform, 10, 2) {
            Err(Error::InsufficientData { have, need }) => {
                assert_eq!((have, need), (2, 3));
            }
            other => panic!("expected insufficient data, got {other:?}"),
        }
    }

    #[test]
    fn repeated_estimates_do_not_count_as_distinct() {
        let truth = DriftParams::new(vec![1.0, 2.5, 1.5]).unwrap();
        let table = tuples_from(&[6.0, 6.0, 6.0, 2.0], &truth, 1);
        assert!(matches!(
            fit_wls(&table, WeightScheme::Uniform, 10, 2),
            Err(Error::InsufficientData { have: 2, need: 3 })
        ));
    }

    #[test]
    fn strong_decay_tracks_the_newest_parameters() {
        let old = DriftParams::new(vec![1.0, 2.5, 1.5]).unwrap();
        let new = DriftParams::new(vec![3.0, 7.5, 4.5]).unwrap();
        let xs = [1.0, 2.0, 3.0, 4.0];
        let mut table = tuples_from(&xs, &old, 1);
        table.extend(tuples_from(&xs, &new, 101));
        let now = 104;

        let fast = fit_wls(&table, WeightScheme::Exponential { lambda: 1.0 }, now, 2).unwrap();
        for (got, want) in fast.coeffs().iter().zip(new.coeffs()) {
            assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
        }

        // With identical designs in both halves, the uniform fit lands exactly
        // on the coefficient midpoint.
        let flat = fit_wls(&table, WeightScheme::Exponential { lambda: 0.0 }, now, 2).unwrap();
        for ((got, old_c), new_c) in flat.coeffs().iter().zip(old.coeffs()).zip(new.coeffs()) {
            let mid = 0.5 * (old_c + new_c);
            assert!((got - mid).abs() < 1e-8, "got {got}, want midpoint {mid}");
        }
    }

    /// Independent oracle: solve the weighted normal equations directly.
    fn normal_equations_fit(xs: &[f64], ys: &[f64], ws: &[f64], degree: usize) -> Vec<f64> {
        let n = degree + 1;
        let mut m = vec![vec![0.0f64; n + 1]; n];
        for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
            let mut pow_i = 1.0;
            for i in 0..n {
                let mut pow_j = 1.0;
                for j in 0..n {
                    m[i][j] += w * pow_i * pow_j;
                    pow_j *= x;
                }
                m[i][n] += w * pow_i * y;
                pow_i *= x;
            }
        }
        // Gauss-Jordan with partial pivoting.
        for col in 0..n {
            let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, pivot);
            let p = m[col][col];
            for k in col..=n {
                m[col][k] /= p;
            }
            for row in 0..n {
                if row != col {
                    let f = m[row][col];
                    for k in col..=n {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
        (0..n).map(|i| m[i][n]).collect()
    }

    #[test]
    fn qr_solution_matches_normal_equations_oracle() {
        let mut rng = crate::rng::stream_rng(31, 0);
        for _ in 0..300 {
            let p = rng.random_range(4..40);
            let truth = DriftParams::new(vec![
                rng.random::<f64>() * 1.5,
                2.0 + rng.random::<f64>(),
                1.0 + rng.random::<f64>(),
            ])
            .unwrap();
            let xs: Vec<f64> = (0..p)
                .map(|i| 1.0 + 98.0 * i as f64 / p as f64 + rng.random::<f64>() * 0.5)
                .collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|&x| measure(&truth, x) + rng.random::<f64>() * 5.0)
                .collect();
            let ws: Vec<f64> = (0..p).map(|_| 0.05 + rng.random::<f64>()).collect();

            let got = wls_solve(&xs, &ys, &ws, 2).unwrap();
            let oracle = normal_equations_fit(&xs, &ys, &ws, 2);
            for (g, o) in got.iter().zip(&oracle) {
                assert!(
                    (g - o).abs() < 1e-6 * (1.0 + o.abs()),
                    "QR {g} vs normal equations {o}"
                );
            }

            // Residual of the weighted normal system at the QR solution.
            let n = 3usize;
            let mut residual = 0.0f64;
            let mut rhs_norm = 0.0f64;
            for i in 0..n {
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                for ((&x, &y), &w) in xs.iter().zip(&ys).zip(&ws) {
                    let pow_i = x.powi(i as i32);
                    let pred: f64 = got
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| c * x.powi(j as i32))
                        .sum();
                    lhs += w * pow_i * pred;
                    rhs += w * pow_i * y;
                }
                residual += (lhs - rhs) * (lhs - rhs);
                rhs_norm += rhs * rhs;
            }
            assert!(
                residual.sqrt() <= 1e-8 * rhs_norm.sqrt(),
                "normal-equation residual too large: {} vs {}",
                residual.sqrt(),
                rhs_norm.sqrt()
            );
        }
    }

    #[test]
    fn near_duplicate_estimates_fall_back_to_ridge() {
        // Three "distinct" values two of which differ by 1e-13: the design is
        // numerically rank-deficient, so the ridge path must still return a
        // finite fit.
        let table = vec![
            CalibrationTuple { raw: 10.0, estimate: 5.0, time: 1 },
            CalibrationTuple { raw: 10.0, estimate: 5.0 + 5e-13, time: 2 },
            CalibrationTuple { raw: 20.0, estimate: 9.0, time: 3 },
        ];
        let fitted = fit_wls(&table, WeightScheme::Uniform, 3, 2).unwrap();
        assert!(fitted.coeffs().iter().all(|c| c.is_finite()));
    }

    fn group(ids: &[usize], now: u64) -> RendezvousGroup {
        RendezvousGroup {
            member_ids: ids.to_vec(),
            timestamp: now,
        }
    }

    fn opts() -> CalibrationOptions {
        CalibrationOptions {
            degree: 2,
            x_max: 100.0,
            table_cap: Some(256),
            consensus: StalenessWeighting::Reciprocal,
            usable_resolution: 0.05,
        }
    }

    #[test]
    fn usable_levels_merge_narrow_bands() {
        let mk = |xs: &[f64]| -> Vec<CalibrationTuple> {
            xs.iter()
                .enumerate()
                .map(|(k, &x)| CalibrationTuple {
                    raw: x,
                    estimate: x,
                    time: k as u64 + 1,
                })
                .collect()
        };
        let o = opts();
        // All near zero: one level no matter how many float-distinct values.
        assert_eq!(usable_levels(&mk(&[0.0, 1e-9, 1e-4, 0.3]), &o), 1);
        // A burst of near-duplicates from one encounter is one level.
        assert_eq!(usable_levels(&mk(&[39.8, 41.6, 43.1]), &o), 1);
        // Well-separated bands count individually.
        assert_eq!(usable_levels(&mk(&[0.1, 12.0, 47.0, 48.0]), &o), 3);
    }

    #[test]
    fn perfect_sensors_agree_on_the_truth() {
        let params = DriftParams::new(vec![1.0, 2.5, 1.5]).unwrap();
        let mut sensors = vec![
            SensorState::new(0, params.clone(), vec![0.0; 3]).unwrap(),
            SensorState::new(1, params.clone(), vec![0.0; 3]).unwrap(),
        ];
        let truth = 37.0;
        let readings: Vec<f64> = sensors.iter().map(|s| s.read_raw(truth, 5)).collect();
        rendezvous_update(&group(&[0, 1], 5), &mut sensors, &readings, 5, FitScheme::Shared(WeightScheme::Uniform), &opts()).unwrap();
        for s in &sensors {
            assert_eq!(s.table.len(), 1);
            assert!(
                (s.table[0].estimate - truth).abs() < 1e-6,
                "consensus {} should equal truth {truth}",
                s.table[0].estimate
            );
        }
    }

    #[test]
    fn all_members_share_one_consensus_value() {
        let params = DriftParams::new(vec![1.0, 2.5, 1.5]).unwrap();
        let mut sensors: Vec<SensorState> = (0..3)
            .map(|id| SensorState::new(id, params.clone(), vec![0.002; 3]).unwrap())
            .collect();
        let readings = vec![50.0, 60.0, 70.0];
        rendezvous_update(&group(&[0, 1, 2], 9), &mut sensors, &readings, 9, FitScheme::Shared(WeightScheme::Uniform), &opts()).unwrap();
        let first = sensors[0].table[0].estimate;
        for s in &sensors {
            assert_eq!(s.table[0].estimate, first);
            assert_eq!(s.table[0].time, 9);
        }
    }

    #[test]
    fn insufficient_data_appends_but_keeps_parameters() {
        let params = DriftParams::new(vec![1.0, 2.5, 1.5]).unwrap();
        let mut sensors = vec![
            SensorState::new(0, params.clone(), vec![0.002; 3]).unwrap(),
            SensorState::new(1, params.clone(), vec![0.002; 3]).unwrap(),
        ];
        let before = sensors[0].estimated_params.clone();
        let readings = vec![12.0, 14.0];
        rendezvous_update(&group(&[0, 1], 3), &mut sensors, &readings, 3, FitScheme::Shared(WeightScheme::Uniform), &opts()).unwrap();
        assert_eq!(sensors[0].table.len(), 1);
        assert_eq!(sensors[0].estimated_params, before);
        assert_eq!(sensors[0].last_calibration, 0, "tau must not advance without a refit");
    }

    #[test]
    fn repeated_rendezvous_with_a_reference_sensor_reduces_drift_error() {
        // A drifting sensor paired every step with a drift-free one: after 200
        // steps its recalibrated estimates must beat the never-updated copy.
        let drifting = DriftParams::new(vec![1.0, 2.5, 1.5]).unwrap();
        let steady = DriftParams::new(vec![0.5, 2.2, 1.2]).unwrap();
        let mut sensors = vec![
            SensorState::new(0, drifting.clone(), vec![0.002; 3]).unwrap(),
            SensorState::new(1, steady, vec![0.0; 3]).unwrap(),
        ];
        let frozen = SensorState::new(9, drifting, vec![0.002; 3]).unwrap();
        let o = opts();

        let truth_at = |t: u64| 50.0 + 40.0 * ((t as f64) / 9.0).sin();
        let mut updated_err = 0.0;
        let mut frozen_err = 0.0;
        for t in 1..=200u64 {
            let x = truth_at(t);
            let readings = vec![sensors[0].read_raw(x, t), sensors[1].read_raw(x, t)];
            rendezvous_update(&group(&[0, 1], t), &mut sensors, &readings, t, FitScheme::Shared(WeightScheme::Exponential { lambda: 0.05 }), &o).unwrap();
            updated_err += (sensors[0].calibrated_estimate(readings[0], o.x_max).value - x).abs();
            frozen_err += (frozen.calibrated_estimate(readings[0], o.x_max).value - x).abs();
        }
        assert!(
            updated_err < frozen_err,
            "recalibration should help: updated {updated_err}, frozen {frozen_err}"
        );
    }
}
