//! Derivative-free mode search and finite-difference curvature.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{log_marginal_likelihood, log_marginal_posterior, CovarianceModel, HyperParams};
use crate::error::{Error, Result};
use crate::ingest::AlignedDataset;

/// Which surface to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Posterior density of the unconstrained coordinates (prior and Jacobian included).
    Posterior,
    /// Marginal likelihood alone.
    Likelihood,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadSettings {
    /// Stop once every vertex lies within this distance of the best one.
    pub tolerance: f64,
    pub max_evaluations: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Number of restarts from the best vertex after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_evaluations: 2000,
            initial_step: 0.5,
            restarts: 1,
        }
    }
}

/// Result of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimize `f` with the Nelder-Mead simplex method. Non-finite values are
/// treated as `+∞`.
pub fn nelder_mead<F>(f: F, x0: &[f64], settings: &NelderMeadSettings) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut x = x0.to_vec();
    let mut value = f64::INFINITY;
    let mut used = 0;
    for _ in 0..=settings.restarts {
        let (bx, bv, n) = simplex_run(&mut eval, &x, settings, settings.max_evaluations - used)
            .map_err(|_| Error::NoConvergence {
                evaluations: settings.max_evaluations,
            })?;
        used += n;
        x = bx;
        value = bv;
        if used >= settings.max_evaluations {
            break;
        }
    }
    if !value.is_finite() {
        return Err(Error::InvalidInput(
            "objective is not finite anywhere on the simplex".into(),
        ));
    }
    Ok(Minimum {
        x,
        value,
        evaluations: used,
    })
}

/// One simplex descent; returns the best vertex, its value and the number
/// of evaluations spent.
fn simplex_run<E>(
    eval: &mut E,
    x0: &[f64],
    settings: &NelderMeadSettings,
    budget: usize,
) -> Result<(Vec<f64>, f64, usize)>
where
    E: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += settings.initial_step;
        let v = eval(&x);
        simplex.push((x, v));
    }
    let mut used = d + 1;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| dist(x, best))
            .fold(0.0, f64::max);
        if diameter < settings.tolerance {
            let (x, v) = simplex.swap_remove(0);
            return Ok((x, v, used));
        }
        if used >= budget {
            return Err(Error::NoConvergence { evaluations: used });
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr);
        used += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            used += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(0.5);
            (xc.clone(), eval(&xc))
        } else {
            let xc = along(-0.5);
            (xc.clone(), eval(&xc))
        };
        used += 1;
        if fc < fr.min(worst.1) {
            simplex[d] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            let v = eval(&x);
            *vertex = (x, v);
        }
        used += d;
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Central finite-difference Hessian of `f` at `x` with per-coordinate step `h`.
pub fn central_hessian<F>(f: F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let d = x.len();
    let f0 = f(x);
    let at = |steps: &[(usize, f64)]| {
        let mut p = x.to_vec();
        for &(i, s) in steps {
            p[i] += s;
        }
        f(&p)
    };
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = (at(&[(i, h)]) - 2.0 * f0 + at(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

pub(crate) const HESSIAN_STEP: f64 = 1e-4;

/// A located maximum of a log density in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub eta: Vec<f64>,
    /// Log density at `eta`.
    pub value: f64,
    /// Hessian of the log density at `eta`, row-major.
    pub hessian: Vec<Vec<f64>>,
    pub evaluations: usize,
}

impl Mode {
    pub fn hessian_matrix(&self) -> DMatrix<f64> {
        let d = self.eta.len();
        DMatrix::from_fn(d, d, |i, j| self.hessian[i][j])
    }
}

/// Maximize an arbitrary log density `g` from `x0` and check that the
/// curvature at the optimum is negative definite.
pub fn find_mode_with<G>(g: G, x0: &[f64], settings: &NelderMeadSettings) -> Result<Mode>
where
    G: Fn(&[f64]) -> f64,
{
    let min = nelder_mead(|x| -g(x), x0, settings)?;
    let hess = central_hessian(&g, &min.x, HESSIAN_STEP);
    if !hess.iter().all(|v| v.is_finite()) {
        return Err(Error::IndefiniteHessian);
    }
    let eig = SymmetricEigen::new(hess.clone());
    if eig.eigenvalues.iter().any(|&l| l >= 0.0) {
        return Err(Error::IndefiniteHessian);
    }
    let d = min.x.len();
    Ok(Mode {
        value: -min.value,
        hessian: (0..d).map(|i| (0..d).map(|j| hess[(i, j)]).collect()).collect(),
        eta: min.x,
        evaluations: min.evaluations + 2 * d * d + 1,
    })
}

/// Log density of the chosen objective at unconstrained coordinates `eta`.
pub(crate) fn objective_at(
    eta: &[f64],
    data: &AlignedDataset,
    model: &CovarianceModel,
    objective: Objective,
) -> f64 {
    let theta = model.from_unconstrained(eta);
    let value = match objective {
        Objective::Posterior => log_marginal_posterior(&theta, data, model)
            .map(|lp| lp + model.log_jacobian(eta)),
        Objective::Likelihood => log_marginal_likelihood(&theta, data, model),
    };
    value.unwrap_or(f64::NEG_INFINITY)
}

/// Locate the posterior (or likelihood) mode for `model` starting at `init`.
pub fn find_mode(
    data: &AlignedDataset,
    model: &CovarianceModel,
    init: &HyperParams,
    objective: Objective,
) -> Result<Mode> {
    let x0 = model.to_unconstrained(init)?;
    find_mode_with(
        |eta| objective_at(eta, data, model, objective),
        &x0,
        &NelderMeadSettings::default(),
    )
}

/// Maximized log likelihood, without curvature requirements.
pub(crate) fn max_log_likelihood(
    data: &AlignedDataset,
    model: &CovarianceModel,
    init: &HyperParams,
) -> Result<(HyperParams, f64)> {
    let x0 = model.to_unconstrained(init)?;
    let min = nelder_mead(
        |eta| -objective_at(eta, data, model, Objective::Likelihood),
        &x0,
        &NelderMeadSettings::default(),
    )?;
    Ok((model.from_unconstrained(&min.x), -min.value))
}
