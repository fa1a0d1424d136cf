//! Small statistics helpers for the experiment harness: summary moments,
//! an exact paired permutation test, and Spearman rank correlation.

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Two-sided paired permutation test on the mean difference.
///
/// Exact over all 2^n sign assignments for n <= 20; larger samples fall back
/// to a fixed-seed Monte Carlo over 100_000 assignments so the result stays
/// deterministic.
pub fn paired_permutation_pvalue(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let observed = mean(&diffs).abs();

    if n <= 20 {
        let total = 1u64 << n;
        let mut hits = 0u64;
        for mask in 0..total {
            let mut sum = 0.0;
            for (i, &d) in diffs.iter().enumerate() {
                sum += if mask >> i & 1 == 1 { -d } else { d };
            }
            if (sum / n as f64).abs() >= observed {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    } else {
        let mut state = 0x853c_49e6_748f_ea9bu64;
        let mut next = move || {
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            state.wrapping_mul(0x2545_f491_4f6c_dd1d)
        };
        let draws = 100_000u64;
        let mut hits = 1u64; // count the identity assignment
        for _ in 0..draws {
            let mask = next();
            let mut sum = 0.0;
            for (i, &d) in diffs.iter().enumerate() {
                sum += if mask >> (i % 64) & 1 == 1 { -d } else { d };
            }
            if (sum / n as f64).abs() >= observed {
                hits += 1;
            }
        }
        hits as f64 / (draws + 1) as f64
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut indexed: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    indexed.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < indexed.len() {
        let mut j = i;
        while j + 1 < indexed.len() && indexed[j + 1].1 == indexed[i].1 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for item in &indexed[i..=j] {
            out[item.0] = avg_rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}
