//! Small numeric helpers shared across modules.

/// `log Σ exp(x_i)`, stable for large magnitudes.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Sample quantile by linear interpolation of order statistics (type 7).
/// `sorted` must be ascending and non-empty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile of a weighted discrete sample. The CDF is interpolated linearly
/// between the mid-points of each atom's probability mass, so a single atom
/// of weight `w_i` spans `[c_{i-1}, c_i]` and is centred at `c_i - w_i / 2`.
pub fn weighted_quantile(values_weights: &[(f64, f64)], p: f64) -> f64 {
    assert!(!values_weights.is_empty(), "quantile of empty sample");
    let mut vw: Vec<(f64, f64)> = values_weights.to_vec();
    vw.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge tied values
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(vw.len());
    for (v, w) in vw {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => merged.push((v, w)),
        }
    }
    let total: f64 = merged.iter().map(|x| x.1).sum();
    let mut cum = 0.0;
    let mids: Vec<f64> = merged
        .iter()
        .map(|(_, w)| {
            let mid = (cum + 0.5 * w) / total;
            cum += w;
            mid
        })
        .collect();
    if p <= mids[0] {
        return merged[0].0;
    }
    for i in 1..merged.len() {
        if p <= mids[i] {
            let f = (p - mids[i - 1]) / (mids[i] - mids[i - 1]);
            return merged[i - 1].0 + f * (merged[i].0 - merged[i - 1].0);
        }
    }
    merged[merged.len() - 1].0
}

/// Weighted mean and variance.
pub fn weighted_moments(values_weights: &[(f64, f64)]) -> (f64, f64) {
    let total: f64 = values_weights.iter().map(|x| x.1).sum();
    let mean = values_weights.iter().map(|(v, w)| v * w).sum::<f64>() / total;
    let var = values_weights
        .iter()
        .map(|(v, w)| w * (v - mean).powi(2))
        .sum::<f64>()
        / total;
    (mean, var)
}
