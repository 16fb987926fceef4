//! Joint posterior sample paths and their non-linear functionals.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gmrf;
use crate::imputation::{condition, AugmentedSystem};
use crate::inference::DiscretePosterior;
use crate::ingest::AlignedDataset;
use crate::rng::stream_rng;
use crate::stats::quantile_type7;

/// `S` joint draws of the latent process at the grid times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub m: usize,
    /// Flattened `[path][time][core]`.
    pub values: Vec<f64>,
    /// Index of the posterior grid point each path was drawn under.
    pub theta_index: Vec<usize>,
    pub seed: u64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.theta_index.len()
    }

    pub fn value(&self, path: usize, l: usize, c: usize) -> f64 {
        self.values[(path * self.times.len() + l) * self.m + c]
    }

    /// Values of one path and core along the grid.
    pub fn path(&self, path: usize, c: usize) -> Vec<f64> {
        (0..self.times.len()).map(|l| self.value(path, l, c)).collect()
    }
}

/// Draw `n_paths` paths: `θ_j ~ α`, then `x* | y, θ_j`. Stream 0 draws the
/// `θ` indices and stream `s + 1` the Gaussian for path `s`, so the ensemble
/// does not depend on scheduling.
pub fn sample_paths(
    post: &DiscretePosterior,
    data: &AlignedDataset,
    grid_times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let weights = post.weights();
    let picker = WeightedIndex::new(&weights).map_err(|e| invalid(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    let theta_index: Vec<usize> = (0..n_paths).map(|_| picker.sample(&mut rng)).collect();

    let system = AugmentedSystem::from_times(data, grid_times)?;
    let unique: Vec<usize> = {
        let mut u = theta_index.clone();
        u.sort_unstable();
        u.dedup();
        u
    };
    let fields: BTreeMap<usize, _> = unique
        .par_iter()
        .map(|&j| {
            condition(&post.points[j].theta, data, &system, &post.model)
                .map(|f| (j, f))
                .map_err(|e| Error::Condition {
                    index: j,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let m = post.model.m;
    let per_path: Vec<Vec<f64>> = theta_index
        .par_iter()
        .enumerate()
        .map(|(s, j)| {
            let field = &fields[j];
            let mut rng = stream_rng(seed, s as u64 + 1);
            let draw = gmrf::sample_gaussian(&field.chol, &field.mean, &mut rng)?;
            Ok(system
                .grid_nodes
                .iter()
                .flat_map(|&node| (0..m).map(move |c| node * m + c))
                .map(|k| draw[k])
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PathEnsemble {
        times: grid_times.to_vec(),
        m,
        values: per_path.concat(),
        theta_index,
        seed,
    })
}

/// Minimum of `values` over grid times in `[t_a, t_b]` and the time at which
/// it occurs; ties go to the earliest time.
pub fn window_min(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<(f64, f64)> {
    let (t_a, t_b) = window;
    let tol = 1e-9;
    let mut best: Option<(f64, f64)> = None;
    for (&t, &v) in times.iter().zip(values) {
        if t < t_a - tol || t > t_b + tol {
            continue;
        }
        if best.is_none_or(|(x, _)| v < x) {
            best = Some((v, t));
        }
    }
    best.ok_or_else(|| invalid(format!("window [{t_a}, {t_b}] contains no grid time")))
}

/// Per-path `(x_min, t_min)` for core `core` over the window.
pub fn path_min(ensemble: &PathEnsemble, core: usize, window: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    if core >= ensemble.m {
        return Err(invalid(format!("core index {core} out of range")));
    }
    (0..ensemble.n_paths())
        .map(|s| window_min(&ensemble.times, &ensemble.path(s, core), window))
        .collect()
}

/// Quartiles of a functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("no samples"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            q25: quantile_type7(&v, 0.25),
            q50: quantile_type7(&v, 0.5),
            q75: quantile_type7(&v, 0.75),
        })
    }
}

/// Summary of `(x_min, t_min)` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub x_min: Quartiles,
    pub t_min: Quartiles,
    pub samples: Vec<(f64, f64)>,
}

pub fn ensemble_summary(samples: &[(f64, f64)]) -> Result<EventSummary> {
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ts: Vec<f64> = samples.iter().map(|s| s.1).collect();
    Ok(EventSummary {
        x_min: Quartiles::of(&xs)?,
        t_min: Quartiles::of(&ts)?,
        samples: samples.to_vec(),
    })
}
