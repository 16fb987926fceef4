//! Weighted grid approximation of the hyperparameter posterior.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::{objective_at, Mode, Objective};
use super::{CovarianceModel, HyperParams};
use crate::error::{invalid, Error, Result};
use crate::ingest::AlignedDataset;
use crate::stats::{log_sum_exp, weighted_moments, weighted_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    /// Step along each standardized axis.
    pub delta_z: f64,
    /// Admit points whose log density is within this of the mode.
    pub delta_pi: f64,
    /// Refuse grids with more admitted points than this.
    pub max_points: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            delta_z: 0.75,
            delta_pi: 6.0,
            max_points: 100_000,
        }
    }
}

/// Admitted points of a generic grid exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericGrid {
    /// `(z, eta, log density)` for each admitted point, mode first.
    pub points: Vec<(Vec<f64>, Vec<f64>, f64)>,
    /// `log ∫ exp(g)` by the cell-volume-weighted sum.
    pub log_integral: f64,
}

/// Lay a grid over an arbitrary log density `g` around `mode`, using the
/// eigenstructure of `-hessian` to standardize the axes.
pub fn explore_grid_with<G>(
    g: G,
    mode: &[f64],
    mode_value: f64,
    hessian: &DMatrix<f64>,
    settings: &GridSettings,
) -> Result<GenericGrid>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let d = mode.len();
    if !(settings.delta_z > 0.0) || settings.delta_pi < 0.0 {
        return Err(invalid("grid needs delta_z > 0 and delta_pi >= 0"));
    }
    let eig = SymmetricEigen::new(-hessian.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::IndefiniteHessian);
    }
    // η = mode + V Λ^{-1/2} z
    let scale = DMatrix::from_fn(d, d, |i, j| {
        eig.eigenvectors[(i, j)] / eig.eigenvalues[j].sqrt()
    });
    let to_eta = |z: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| mode[i] + (0..d).map(|j| scale[(i, j)] * z[j]).sum::<f64>())
            .collect()
    };
    let admitted = |v: f64| v.is_finite() && mode_value - v < settings.delta_pi;

    // walk each signed axis
    let mut axis_steps: Vec<Vec<i64>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut steps = vec![0i64];
        for dir in [-1i64, 1] {
            let mut s = dir;
            loop {
                let mut z = vec![0.0; d];
                z[k] = s as f64 * settings.delta_z;
                if !admitted(g(&to_eta(&z))) {
                    break;
                }
                steps.push(s);
                if steps.len() > settings.max_points {
                    return Err(Error::GridTooLarge {
                        cap: settings.max_points,
                    });
                }
                s += dir;
            }
        }
        steps.sort_unstable();
        axis_steps.push(steps);
    }

    let box_size = axis_steps
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
        .unwrap_or(usize::MAX);
    if box_size > settings.max_points.saturating_mul(20) {
        return Err(Error::GridTooLarge {
            cap: settings.max_points,
        });
    }
    let combos: Vec<Vec<i64>> = (0..box_size)
        .map(|mut idx| {
            axis_steps
                .iter()
                .map(|steps| {
                    let s = steps[idx % steps.len()];
                    idx /= steps.len();
                    s
                })
                .collect()
        })
        .collect();

    let mut points: Vec<(Vec<f64>, Vec<f64>, f64)> = combos
        .par_iter()
        .map(|c| {
            let z: Vec<f64> = c.iter().map(|&s| s as f64 * settings.delta_z).collect();
            let eta = to_eta(&z);
            let v = if c.iter().all(|&s| s == 0) {
                mode_value
            } else {
                g(&eta)
            };
            (z, eta, v)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|p| p.0.iter().all(|&z| z == 0.0) || admitted(p.2))
        .collect();
    if points.len() > settings.max_points {
        return Err(Error::GridTooLarge {
            cap: settings.max_points,
        });
    }
    // mode first, then the remaining points in a fixed order
    let mode_pos = points
        .iter()
        .position(|p| p.0.iter().all(|&z| z == 0.0))
        .expect("mode is always admitted");
    let first = points.remove(mode_pos);
    points.insert(0, first);

    let values: Vec<f64> = points.iter().map(|p| p.2).collect();
    let log_cell = d as f64 * settings.delta_z.ln()
        - 0.5 * eig.eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
    Ok(GenericGrid {
        log_integral: log_sum_exp(&values) + log_cell,
        points,
    })
}

/// One admitted grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: HyperParams,
    /// Standardized coordinates.
    pub z: Vec<f64>,
    /// Log posterior density of the unconstrained coordinates (up to the
    /// evidence), the quantity the grid is laid out on.
    pub log_post: f64,
    pub weight: f64,
}

/// Discrete approximation `{θ_j, α_j}` of `π(θ | y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePosterior {
    pub model: CovarianceModel,
    pub points: Vec<GridPoint>,
    pub mode: HyperParams,
    pub mode_log_post: f64,
    /// Hessian of the log posterior in unconstrained coordinates at the mode.
    pub hessian: Vec<Vec<f64>>,
    pub log_evidence: f64,
    pub settings: GridSettings,
}

/// Posterior summary of one hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub name: String,
    pub mode: f64,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

/// Explore the posterior of `model` around a located mode.
pub fn explore_grid(
    data: &AlignedDataset,
    model: &CovarianceModel,
    mode: &Mode,
    settings: &GridSettings,
) -> Result<DiscretePosterior> {
    let grid = explore_grid_with(
        |eta| objective_at(eta, data, model, Objective::Posterior),
        &mode.eta,
        mode.value,
        &mode.hessian_matrix(),
        settings,
    )?;
    Ok(DiscretePosterior::from_grid(*model, grid, mode, *settings))
}

impl DiscretePosterior {
    fn from_grid(model: CovarianceModel, grid: GenericGrid, mode: &Mode, settings: GridSettings) -> Self {
        let values: Vec<f64> = grid.points.iter().map(|p| p.2).collect();
        let norm = log_sum_exp(&values);
        let mut points: Vec<GridPoint> = grid
            .points
            .into_iter()
            .map(|(z, eta, v)| GridPoint {
                theta: model.from_unconstrained(&eta),
                z,
                log_post: v,
                weight: (v - norm).exp(),
            })
            .collect();
        let total: f64 = points.iter().map(|p| p.weight).sum();
        for p in &mut points {
            p.weight /= total;
        }
        Self {
            model,
            points,
            mode: model.from_unconstrained(&mode.eta),
            mode_log_post: mode.value,
            hessian: mode.hessian.clone(),
            log_evidence: grid.log_integral,
            settings,
        }
    }

    /// A one-point posterior at `theta` (weight 1).
    pub fn point_mass(model: CovarianceModel, theta: HyperParams) -> Self {
        let d = model.n_params();
        Self {
            model,
            points: vec![GridPoint {
                theta,
                z: vec![0.0; d],
                log_post: 0.0,
                weight: 1.0,
            }],
            mode: theta,
            mode_log_post: 0.0,
            hessian: vec![vec![0.0; d]; d],
            log_evidence: 0.0,
            settings: GridSettings {
                delta_pi: 0.0,
                ..Default::default()
            },
        }
    }

    /// Weights and thetas from explicit components; weights are normalized.
    pub fn from_components(
        model: CovarianceModel,
        components: &[(HyperParams, f64)],
    ) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("posterior needs at least one component"))?;
        let total: f64 = components.iter().map(|c| c.1).sum();
        if !(total > 0.0) || components.iter().any(|c| !(c.1 > 0.0)) {
            return Err(invalid("component weights must be positive"));
        }
        let mut post = Self::point_mass(model, first.0);
        post.points = components
            .iter()
            .map(|(theta, w)| GridPoint {
                theta: *theta,
                z: vec![0.0; model.n_params()],
                log_post: (w / total).ln(),
                weight: w / total,
            })
            .collect();
        Ok(post)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.weight).collect()
    }

    /// `(value, weight)` pairs of one natural coordinate.
    pub fn marginal(&self, coord: usize) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|p| (self.model.natural(&p.theta)[coord], p.weight))
            .collect()
    }

    pub fn quantile(&self, coord: usize, p: f64) -> f64 {
        weighted_quantile(&self.marginal(coord), p)
    }

    /// Central credible interval with the given coverage.
    pub fn credible_interval(&self, coord: usize, level: f64) -> (f64, f64) {
        let tail = 0.5 * (1.0 - level);
        (self.quantile(coord, tail), self.quantile(coord, 1.0 - tail))
    }

    pub fn summaries(&self) -> Vec<GridSummary> {
        let mode = self.model.natural(&self.mode);
        self.model
            .param_names()
            .into_iter()
            .enumerate()
            .map(|(k, name)| {
                let marg = self.marginal(k);
                let (mean, var) = weighted_moments(&marg);
                let q = |p| weighted_quantile(&marg, p);
                GridSummary {
                    name: name.to_string(),
                    mode: mode[k],
                    mean,
                    sd: var.sqrt(),
                    q05: q(0.05),
                    q25: q(0.25),
                    q50: q(0.5),
                    q75: q(0.75),
                    q95: q(0.95),
                }
            })
            .collect()
    }
}

/// Kernel-smoothed marginal density of one coordinate, for display.
/// Returns 512 `(value, density)` pairs.
pub fn smooth_marginal(post: &DiscretePosterior, coord: usize) -> Result<Vec<(f64, f64)>> {
    if coord >= post.model.n_params() {
        return Err(invalid(format!("coordinate {coord} out of range")));
    }
    let marg = post.marginal(coord);
    let lo = marg.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = marg.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(invalid("marginal has a single support point"));
    }
    let (_, var) = weighted_moments(&marg);
    let sd = var.sqrt();
    let iqr = weighted_quantile(&marg, 0.75) - weighted_quantile(&marg, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let n_eff = 1.0 / marg.iter().map(|p| p.1 * p.1).sum::<f64>();
    let h = 0.9 * spread * n_eff.powf(-0.2);

    const N: usize = 512;
    let (a, b) = (lo - 5.0 * h, hi + 5.0 * h);
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..N)
        .map(|i| {
            let x = a + (b - a) * i as f64 / (N - 1) as f64;
            let dens = marg
                .iter()
                .map(|(v, w)| w * (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
                * norm;
            (x, dens)
        })
        .collect())
}
