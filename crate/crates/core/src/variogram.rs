//! Empirical semivariograms, linear variogram fits and change of support.
//!
//! The linear model is `γ(h) = nugget + slope · h`, with the process
//! increment variance `v² = 2 · slope`. Averaging a process over windows of
//! length `w` changes its semivariogram in closed form; for lags `h ≥ w` the
//! nugget scales like `1 / w` while the slope is unchanged, which is what
//! justifies the nugget ratio `k = w_ref / w_other` between cores.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::ingest::CoreSeries;

pub const DEFAULT_BINS: usize = 30;

/// One lag bin of an empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean lag of the pairs in the bin (k yr).
    pub lag: f64,
    pub gamma: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    pub bins: Vec<VariogramBin>,
}

/// Fitted `nugget + slope · h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearVariogramFit {
    pub nugget: f64,
    pub slope: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted residual sum of squares at the final weights.
    pub weighted_rss: f64,
}

impl LinearVariogramFit {
    /// Process increment variance per unit time.
    pub fn v2(&self) -> f64 {
        2.0 * self.slope
    }

    pub fn gamma(&self, h: f64) -> f64 {
        self.nugget + self.slope * h
    }
}

/// Default maximum lag: a third of the series span.
pub fn default_max_lag(series: &CoreSeries) -> f64 {
    let span = series.times.last().unwrap_or(&0.0) - series.times.first().unwrap_or(&0.0);
    span / 3.0
}

/// Pairwise semivariance `½(y_i - y_j)²` averaged in equal-width bins over
/// `(0, max_lag]`. Empty bins are dropped.
pub fn empirical_semivariogram(
    series: &CoreSeries,
    max_lag: f64,
    n_bins: usize,
) -> Result<EmpiricalVariogram> {
    if n_bins < 2 {
        return Err(invalid("need at least 2 lag bins"));
    }
    if !(max_lag > 0.0) {
        return Err(invalid("max_lag must be positive"));
    }
    let width = max_lag / n_bins as f64;
    let mut sum_lag = vec![0.0; n_bins];
    let mut sum_gamma = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    let (t, y) = (&series.times, &series.values);
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            let h = t[j] - t[i];
            if h > max_lag {
                break;
            }
            let b = ((h / width).ceil() as usize).clamp(1, n_bins) - 1;
            let d = y[j] - y[i];
            sum_lag[b] += h;
            sum_gamma[b] += 0.5 * d * d;
            count[b] += 1;
        }
    }
    let bins: Vec<VariogramBin> = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| VariogramBin {
            lag: sum_lag[b] / count[b] as f64,
            gamma: sum_gamma[b] / count[b] as f64,
            n_pairs: count[b],
        })
        .collect();
    if bins.is_empty() {
        return Err(invalid(format!("no pairs within max_lag {max_lag}")));
    }
    Ok(EmpiricalVariogram { bins })
}

/// Weighted least-squares fit of `nugget + slope·h` using Cressie's weights
/// `n_j / γ(h_j)²`, iterated until both parameters change by less than 1e-8
/// (relative) or 100 iterations. Negative parameters are clamped to zero.
pub fn fit_linear_variogram(emp: &EmpiricalVariogram) -> Result<LinearVariogramFit> {
    let bins = &emp.bins;
    if bins.len() < 2 {
        return Err(invalid("linear variogram fit needs at least 2 bins"));
    }
    let first = bins[0].lag;
    if bins.iter().all(|b| (b.lag - first).abs() <= 1e-12 * first.abs().max(1.0)) {
        return Err(invalid("degenerate variogram design: all bins share one lag"));
    }
    let scale = bins.iter().map(|b| b.gamma).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);

    let weighted = |model: &dyn Fn(f64) -> f64| -> (f64, f64) {
        let w: Vec<f64> = bins
            .iter()
            .map(|b| {
                let g = model(b.lag).max(1e-12 * scale);
                b.n_pairs as f64 / (g * g)
            })
            .collect();
        solve_wls(bins, &w)
    };

    let (mut a, mut b) = weighted(&|_| 1.0);
    let mut iterations = 1;
    let mut converged = false;
    while iterations < 100 {
        let (na, nb) = weighted(&|h| a + b * h);
        iterations += 1;
        let rel = |new: f64, old: f64| (new - old).abs() / new.abs().max(old.abs()).max(1e-300);
        let done = rel(na, a) < 1e-8 && rel(nb, b) < 1e-8;
        a = na;
        b = nb;
        if done {
            converged = true;
            break;
        }
    }
    let weighted_rss = bins
        .iter()
        .map(|bin| {
            let g = (a + b * bin.lag).max(1e-12 * scale);
            let r = bin.gamma - (a + b * bin.lag);
            bin.n_pairs as f64 / (g * g) * r * r
        })
        .sum();
    Ok(LinearVariogramFit {
        nugget: a,
        slope: b,
        iterations,
        converged,
        weighted_rss,
    })
}

/// Non-negative weighted least squares for `γ ≈ a + b h` with two unknowns.
fn solve_wls(bins: &[VariogramBin], w: &[f64]) -> (f64, f64) {
    let (mut sw, mut sh, mut shh, mut sg, mut shg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (bin, &wi) in bins.iter().zip(w) {
        sw += wi;
        sh += wi * bin.lag;
        shh += wi * bin.lag * bin.lag;
        sg += wi * bin.gamma;
        shg += wi * bin.lag * bin.gamma;
    }
    let det = sw * shh - sh * sh;
    let (a, b) = if det > 0.0 {
        ((shh * sg - sh * shg) / det, (sw * shg - sh * sg) / det)
    } else {
        (sg / sw, 0.0)
    };
    if a >= 0.0 && b >= 0.0 {
        (a, b)
    } else if a < 0.0 {
        // slope-only fit through the origin
        (0.0, (shg / shh).max(0.0))
    } else {
        ((sg / sw).max(0.0), 0.0)
    }
}

/// Standardized first differences and QQ pairs against the standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedIncrements {
    pub values: Vec<f64>,
    /// `(theoretical quantile, sorted sample value)`.
    pub qq: Vec<(f64, f64)>,
}

/// `(y_{i+1} - y_i) / sqrt(2·nugget + v²·(t_{i+1} - t_i))` for consecutive pairs.
pub fn standardized_increments(
    series: &CoreSeries,
    fit: &LinearVariogramFit,
) -> Result<StandardizedIncrements> {
    if !(fit.nugget >= 0.0 && fit.slope >= 0.0) {
        return Err(invalid("variogram fit must be non-negative"));
    }
    let v2 = fit.v2();
    let values: Vec<f64> = series
        .times
        .windows(2)
        .zip(series.values.windows(2))
        .map(|(t, y)| {
            let sd = (2.0 * fit.nugget + v2 * (t[1] - t[0])).sqrt();
            let d = y[1] - y[0];
            if sd > 0.0 {
                d / sd
            } else {
                0.0
            }
        })
        .collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let n = sorted.len() as f64;
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| (normal.inverse_cdf((i as f64 + 0.5) / n), s))
        .collect();
    Ok(StandardizedIncrements { values, qq })
}

/// Semivariogram of a pure-nugget process after averaging over windows of
/// length `w`: `nugget / w` for `h ≥ w`, rising linearly as `nugget·h / w²`
/// below the window length.
pub fn averaged_nugget_semivariogram(nugget: f64, w: f64, h: f64) -> f64 {
    let h = h.abs();
    if h >= w {
        nugget / w
    } else {
        nugget * h / (w * w)
    }
}

/// Semivariogram of an independent-increments process (increment variance
/// `v2` per unit time) after averaging over windows of length `w`.
pub fn averaged_increments_semivariogram(v2: f64, w: f64, h: f64) -> f64 {
    let h = h.abs();
    if h >= w {
        0.5 * v2 * h - w * v2 / 6.0
    } else {
        v2 * h * h / (2.0 * w) - v2 * h * h * h / (6.0 * w * w)
    }
}

/// Nugget scale of a core relative to the reference: `w_ref / w_other`.
pub fn support_ratio(w_ref: f64, w_other: f64) -> Result<f64> {
    if !(w_ref > 0.0 && w_other > 0.0) {
        return Err(invalid("support lengths must be positive"));
    }
    Ok(w_ref / w_other)
}
