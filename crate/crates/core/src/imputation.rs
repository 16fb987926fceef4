//! Gridded posterior marginals of the latent process.
//!
//! For each grid point `θ_j` the latent field is conditioned on all data over
//! the augmented axis (observed times merged with a regular grid). Mixing the
//! per-`θ_j` Gaussians with the grid weights gives the marginal posterior at
//! every grid node as a finite Gaussian mixture.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::gmrf;
use crate::inference::{
    condition_nodes, ConditionalField, CovarianceModel, DiscretePosterior, HyperParams, NodeData,
};
use crate::ingest::AlignedDataset;

/// Bidecadal spacing in k yr.
pub const DEFAULT_GRID_STEP: f64 = 0.02;
/// Tolerance for merging grid times with observation times.
pub const MERGE_TOLERANCE: f64 = 1e-9;

/// Regular grid `start + iΔ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
    /// Whether `end` itself is a grid time when it falls on the lattice.
    pub include_end: bool,
}

impl ImputationGrid {
    pub fn new(start: f64, end: f64, step: f64, include_end: bool) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && step > 0.0 && step.is_finite()) {
            return Err(invalid("grid needs finite bounds and a positive step"));
        }
        if !(end > start) {
            return Err(invalid(format!("grid end {end} must exceed start {start}")));
        }
        Ok(Self {
            start,
            end,
            step,
            include_end,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        let span = (self.end - self.start) / self.step;
        // tolerate representation error in the lattice position of `end`
        let last = (span + 1e-9).floor() as usize;
        let on_lattice = (span - last as f64).abs() < 1e-9;
        let n = if on_lattice && !self.include_end {
            last
        } else {
            last + 1
        };
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }

    pub fn len(&self) -> usize {
        self.times().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Observed and grid times merged onto one node axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub times: Vec<f64>,
    /// Observations per node (empty for grid-only nodes).
    pub obs: Vec<Vec<(usize, f64)>>,
    /// Node index of each grid time.
    pub grid_nodes: Vec<usize>,
    /// Node index of each observed time.
    pub obs_nodes: Vec<usize>,
    pub grid_times: Vec<f64>,
}

impl AugmentedSystem {
    pub fn new(data: &AlignedDataset, grid: &ImputationGrid) -> Result<Self> {
        Self::from_times(data, &grid.times())
    }

    /// Merge `data` with arbitrary sorted grid times.
    pub fn from_times(data: &AlignedDataset, grid_times: &[f64]) -> Result<Self> {
        if grid_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("grid times must be strictly increasing"));
        }
        let mut times = Vec::with_capacity(data.n_times() + grid_times.len());
        let mut obs = Vec::with_capacity(times.capacity());
        let mut grid_nodes = Vec::with_capacity(grid_times.len());
        let mut obs_nodes = Vec::with_capacity(data.n_times());
        let (mut i, mut g) = (0, 0);
        while i < data.n_times() || g < grid_times.len() {
            let to = data.times.get(i).copied().unwrap_or(f64::INFINITY);
            let tg = grid_times.get(g).copied().unwrap_or(f64::INFINITY);
            let node = times.len();
            if (to - tg).abs() <= MERGE_TOLERANCE {
                times.push(to);
                obs.push(data.obs[i].clone());
                obs_nodes.push(node);
                grid_nodes.push(node);
                i += 1;
                g += 1;
            } else if to < tg {
                times.push(to);
                obs.push(data.obs[i].clone());
                obs_nodes.push(node);
                i += 1;
            } else {
                times.push(tg);
                obs.push(Vec::new());
                grid_nodes.push(node);
                g += 1;
            }
        }
        Ok(Self {
            times,
            obs,
            grid_nodes,
            obs_nodes,
            grid_times: grid_times.to_vec(),
        })
    }

    fn nodes(&self) -> NodeData<'_> {
        NodeData {
            times: &self.times,
            obs: self.obs.iter().map(Vec::as_slice).collect(),
        }
    }
}

/// Condition the latent field on the data over the augmented axis.
pub fn condition(
    theta: &HyperParams,
    data: &AlignedDataset,
    system: &AugmentedSystem,
    model: &CovarianceModel,
) -> Result<ConditionalField> {
    condition_nodes(&system.nodes(), &data.k_factors, theta, model)
}

/// One mixture component over all grid nodes and cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Indexed `l * m + c`.
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Gaussian-mixture posterior marginals at every grid time and core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMarginal {
    pub times: Vec<f64>,
    pub m: usize,
    pub components: Vec<MixtureComponent>,
}

impl MixtureMarginal {
    /// `(μ_j, τ_j, α_j)` at grid node `l`, core `c`.
    pub fn at(&self, l: usize, c: usize) -> Vec<(f64, f64, f64)> {
        let k = l * self.m + c;
        self.components
            .iter()
            .map(|comp| (comp.mean[k], comp.variance[k], comp.weight))
            .collect()
    }

    pub fn mean(&self, l: usize, c: usize) -> f64 {
        mixture_mean(&self.at(l, c))
    }

    pub fn variance(&self, l: usize, c: usize) -> f64 {
        mixture_variance(&self.at(l, c))
    }

    pub fn quantile(&self, l: usize, c: usize, p: f64) -> Result<f64> {
        mixture_quantile(&self.at(l, c), p)
    }
}

/// Mixture marginals for a discrete posterior. A failed component is an
/// error: dropping it would silently reweight the rest.
pub fn mixture_marginals(
    post: &DiscretePosterior,
    data: &AlignedDataset,
    grid: &ImputationGrid,
) -> Result<MixtureMarginal> {
    mixture_marginals_at(post, data, &grid.times())
}

/// [`mixture_marginals`] at arbitrary sorted grid times.
pub fn mixture_marginals_at(
    post: &DiscretePosterior,
    data: &AlignedDataset,
    grid_times: &[f64],
) -> Result<MixtureMarginal> {
    if post.is_empty() {
        return Err(invalid("posterior has no points"));
    }
    let system = AugmentedSystem::from_times(data, grid_times)?;
    let m = post.model.m;
    let components = post
        .points
        .par_iter()
        .enumerate()
        .map(|(j, point)| {
            let field = condition(&point.theta, data, &system, &post.model).map_err(|e| {
                Error::Condition {
                    index: j,
                    source: Box::new(e),
                }
            })?;
            let var = gmrf::marginal_variances(&field.chol);
            let mut mean = Vec::with_capacity(system.grid_nodes.len() * m);
            let mut variance = Vec::with_capacity(mean.capacity());
            for &node in &system.grid_nodes {
                for c in 0..m {
                    mean.push(field.mean[node * m + c]);
                    variance.push(var[node * m + c]);
                }
            }
            Ok(MixtureComponent {
                weight: point.weight,
                mean,
                variance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureMarginal {
        times: grid_times.to_vec(),
        m,
        components,
    })
}

/// `Σ α_j μ_j`.
pub fn mixture_mean(components: &[(f64, f64, f64)]) -> f64 {
    components.iter().map(|(mu, _, a)| a * mu).sum()
}

/// `Σ α_j μ_j² - (Σ α_j μ_j)² + Σ α_j τ_j`.
pub fn mixture_variance(components: &[(f64, f64, f64)]) -> f64 {
    let mean = mixture_mean(components);
    let between: f64 = components.iter().map(|(mu, _, a)| a * (mu - mean).powi(2)).sum();
    let within: f64 = components.iter().map(|(_, tau, a)| a * tau).sum();
    between + within
}

/// Mixture CDF at `x`.
pub fn mixture_cdf(components: &[(f64, f64, f64)], x: f64) -> f64 {
    components
        .iter()
        .map(|&(mu, tau, a)| {
            let f = if tau > 0.0 {
                Normal::new(mu, tau.sqrt()).map(|n| n.cdf(x)).unwrap_or(0.5)
            } else if x >= mu {
                1.0
            } else {
                0.0
            };
            a * f
        })
        .sum()
}

/// Quantile of a Gaussian mixture by bisection on its CDF.
pub fn mixture_quantile(components: &[(f64, f64, f64)], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("quantile level {p} must lie in (0, 1)")));
    }
    if components.is_empty() {
        return Err(invalid("mixture has no components"));
    }
    let lo_mu = components.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let hi_mu = components.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let sd = components.iter().map(|c| c.1).fold(0.0, f64::max).sqrt();
    let (mut lo, mut hi) = (lo_mu - 10.0 * sd, hi_mu + 10.0 * sd);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = mixture_cdf(components, mid);
        if (f - p).abs() < 1e-10 {
            return Ok(mid);
        }
        if f < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
