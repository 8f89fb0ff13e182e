//! Shared numeric kernels: stable log-space reductions, the standard-normal
//! CDF pair, order-statistic quantiles, equal-frequency binning, and
//! permutation-invariant summation.

use statrs::function::erf;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Stable log(Σ exp(x_i)). Returns −∞ for an empty slice or all-(−∞) input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if !m.is_finite() {
        return m;
    }
    let mut s = 0.0;
    for &x in xs {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// In-place log-softmax. A no-op (up to rounding) when the entries already
/// encode a normalized distribution in log space.
pub fn log_softmax_in_place(xs: &mut [f64]) {
    let z = logsumexp(xs);
    if z.is_finite() {
        for x in xs.iter_mut() {
            *x -= z;
        }
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let z = logsumexp(xs);
    xs.iter().map(|&x| (x - z).exp()).collect()
}

/// Log-density of N(mean, std²) at x; std must be positive.
pub fn normal_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - LN_SQRT_2PI
}

/// Standard-normal CDF Φ(z).
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard-normal quantile Φ⁻¹(u) for u in (0, 1).
pub fn std_normal_quantile(u: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf::erf_inv(2.0 * u - 1.0)
}

/// Neumaier-compensated sum, with the inputs sorted first so that the result
/// is identical for any permutation of the same multiset.
pub fn stable_sum(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values.iter() {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Pearson correlation computed from permutation-invariant sums. Either side
/// having zero variance yields 0 by convention.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean = |vs: &[f64]| stable_sum(&mut vs.to_vec()) / nf;
    let mx = mean(xs);
    let my = mean(ys);
    let mut dxy: Vec<f64> = Vec::with_capacity(n);
    let mut dxx: Vec<f64> = Vec::with_capacity(n);
    let mut dyy: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        dxy.push(dx * dy);
        dxx.push(dx * dx);
        dyy.push(dy * dy);
    }
    let sxy = stable_sum(&mut dxy);
    let sxx = stable_sum(&mut dxx);
    let syy = stable_sum(&mut dyy);
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Empirical quantile of `sorted` (ascending) at probability `p`, using
/// linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Interior cut points for `bins` equal-frequency bins. The returned edges are
/// order statistics, so any strictly increasing transform of the data maps to
/// the transformed edges and bin assignments are rank-invariant.
pub fn equal_frequency_edges(values: &[f64], bins: usize) -> Vec<f64> {
    assert!(bins >= 2);
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return Vec::new();
    }
    let n = sorted.len();
    let mut edges = Vec::with_capacity(bins - 1);
    for k in 1..bins {
        let idx = (n * k / bins).min(n - 1);
        edges.push(sorted[idx]);
    }
    edges.dedup_by(|a, b| a == b);
    edges
}

/// Bin index of `x` given interior edges: the count of edges strictly below x.
pub fn bin_index(x: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e < x)
}

/// Two-sample Kolmogorov–Smirnov statistic, exact over the pooled support.
/// Identical multisets give exactly 0.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d.min(1.0)
}
