//! Hyperparameter inference for the multivariate independent-increments model.
//!
//! Observations are `y = x + ε` with `x` an intrinsic multivariate random walk
//! in continuous time (`x(t + h) - x(t) ~ N(0, v² |h| Σ)`) and independent
//! nugget noise `ε_c ~ N(0, k_c σ²_ε)`. The latent field is Gaussian given
//! `θ`, so it integrates out exactly and `π(θ | y)` is available in closed
//! form up to a constant. Inference then proceeds in two steps: locate the
//! mode of `log π(θ | y)` ([`find_mode`]) and lay a weighted grid over the
//! posterior ([`explore_grid`]).

mod grid;
mod optimize;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gmrf::{self, BandCholesky};
use crate::ingest::AlignedDataset;

pub use grid::{
    explore_grid, explore_grid_with, smooth_marginal, DiscretePosterior, GenericGrid, GridPoint,
    GridSettings, GridSummary,
};
pub(crate) use optimize::max_log_likelihood;
pub use optimize::{
    central_hessian, find_mode, find_mode_with, nelder_mead, Minimum, Mode, NelderMeadSettings,
    Objective,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Covariance structure for the core cross-covariance `Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Exchangeable correlation `ρ` with equal increment variances.
    M1,
    /// Independent cores (`Σ = I`).
    M2,
    /// Correlation `ρ` with variance ratio `a` for every non-reference core.
    M3,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(ModelKind::M1),
            "m2" => Ok(ModelKind::M2),
            "m3" => Ok(ModelKind::M3),
            other => Err(invalid(format!("unknown model `{other}` (expected m1, m2 or m3)"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::M1 => "M1",
            ModelKind::M2 => "M2",
            ModelKind::M3 => "M3",
        })
    }
}

/// A covariance structure bound to a core count and a prior range for `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub kind: ModelKind,
    pub m: usize,
    /// Uniform prior support for `ρ`.
    pub rho_bounds: (f64, f64),
}

impl CovarianceModel {
    pub fn new(kind: ModelKind, m: usize) -> Result<Self> {
        Self::with_rho_bounds(kind, m, (0.5, 1.0))
    }

    pub fn with_rho_bounds(kind: ModelKind, m: usize, rho_bounds: (f64, f64)) -> Result<Self> {
        if m == 0 {
            return Err(invalid("model needs at least one core"));
        }
        if kind == ModelKind::M3 && m < 2 {
            return Err(invalid("M3 needs at least two cores"));
        }
        let (lo, hi) = rho_bounds;
        if !(lo < hi && lo > -1.0 && hi <= 1.0) {
            return Err(invalid(format!("invalid rho prior bounds ({lo}, {hi})")));
        }
        Ok(Self { kind, m, rho_bounds })
    }

    pub fn has_rho(&self) -> bool {
        self.m >= 2 && self.kind != ModelKind::M2
    }

    pub fn has_a(&self) -> bool {
        self.kind == ModelKind::M3
    }

    /// Number of free hyperparameters.
    pub fn n_params(&self) -> usize {
        2 + usize::from(self.has_rho()) + usize::from(self.has_a())
    }

    /// Names of the hyperparameters in coordinate order.
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = vec!["v2"];
        if self.has_rho() {
            names.push("rho");
        }
        names.push("sigma2_eps");
        if self.has_a() {
            names.push("a");
        }
        names
    }

    /// Cross-core matrix `Σ` (increment covariance per unit `v²`).
    pub fn sigma(&self, theta: &HyperParams) -> Result<DMatrix<f64>> {
        let m = self.m;
        let rho = if self.has_rho() {
            theta.rho.ok_or_else(|| invalid("model needs rho"))?
        } else {
            0.0
        };
        let a = if self.has_a() {
            theta.a.ok_or_else(|| invalid("M3 needs a"))?
        } else {
            1.0
        };
        let scale = |c: usize| if c == 0 { 1.0 } else { a };
        Ok(DMatrix::from_fn(m, m, |c, d| {
            if c == d {
                scale(c)
            } else {
                rho * (scale(c) * scale(d)).sqrt()
            }
        }))
    }

    /// Map natural parameters to unconstrained coordinates
    /// `(log v², logit((ρ - lo)/(hi - lo)), log σ²_ε, log a)`.
    pub fn to_unconstrained(&self, theta: &HyperParams) -> Result<Vec<f64>> {
        self.check_domain(theta)?;
        let mut eta = vec![theta.v2.ln()];
        if self.has_rho() {
            let (lo, hi) = self.rho_bounds;
            let u = (theta.rho.unwrap() - lo) / (hi - lo);
            eta.push((u / (1.0 - u)).ln());
        }
        eta.push(theta.sigma2_eps.ln());
        if self.has_a() {
            eta.push(theta.a.unwrap().ln());
        }
        Ok(eta)
    }

    pub fn from_unconstrained(&self, eta: &[f64]) -> HyperParams {
        let mut it = eta.iter().copied();
        let v2 = it.next().expect("eta too short").exp();
        let rho = self.has_rho().then(|| {
            let (lo, hi) = self.rho_bounds;
            let s = 1.0 / (1.0 + (-it.next().expect("eta too short")).exp());
            lo + (hi - lo) * s
        });
        let sigma2_eps = it.next().expect("eta too short").exp();
        let a = self.has_a().then(|| it.next().expect("eta too short").exp());
        HyperParams {
            v2,
            rho,
            sigma2_eps,
            a,
        }
    }

    /// `log |dθ/dη|` of the unconstrained transform.
    pub fn log_jacobian(&self, eta: &[f64]) -> f64 {
        let mut it = eta.iter().copied();
        let mut total = it.next().unwrap_or(0.0);
        if self.has_rho() {
            let z = it.next().unwrap_or(0.0);
            let (lo, hi) = self.rho_bounds;
            // log s(1 - s) = -softplus(z) - softplus(-z)
            total += (hi - lo).ln() - softplus(z) - softplus(-z);
        }
        total += it.next().unwrap_or(0.0);
        if self.has_a() {
            total += it.next().unwrap_or(0.0);
        }
        total
    }

    pub fn check_domain(&self, theta: &HyperParams) -> Result<()> {
        if !(theta.v2 > 0.0 && theta.v2.is_finite()) {
            return Err(invalid("v2 must be positive"));
        }
        if !(theta.sigma2_eps > 0.0 && theta.sigma2_eps.is_finite()) {
            return Err(invalid("sigma2_eps must be positive"));
        }
        if self.has_rho() {
            let (lo, hi) = self.rho_bounds;
            match theta.rho {
                Some(r) if r > lo && r < hi => {}
                _ => return Err(invalid(format!("rho must lie in ({lo}, {hi})"))),
            }
        }
        if self.has_a() {
            match theta.a {
                Some(a) if a > 0.0 && a.is_finite() => {}
                _ => return Err(invalid("a must be positive")),
            }
        }
        Ok(())
    }

    /// Natural-coordinate vector in [`param_names`](Self::param_names) order.
    pub fn natural(&self, theta: &HyperParams) -> Vec<f64> {
        let mut out = vec![theta.v2];
        if self.has_rho() {
            out.push(theta.rho.unwrap_or(f64::NAN));
        }
        out.push(theta.sigma2_eps);
        if self.has_a() {
            out.push(theta.a.unwrap_or(f64::NAN));
        }
        out
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Hyperparameters `θ = (v², ρ, σ²_ε[, a])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Increment variance per unit time.
    pub v2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Nugget variance of the reference core.
    pub sigma2_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

impl HyperParams {
    pub fn new(v2: f64, rho: Option<f64>, sigma2_eps: f64) -> Self {
        Self {
            v2,
            rho,
            sigma2_eps,
            a: None,
        }
    }

    pub fn with_a(mut self, a: f64) -> Self {
        self.a = Some(a);
        self
    }
}

/// Observations laid out on a node axis: per node, the observed cores.
#[derive(Debug, Clone)]
pub(crate) struct NodeData<'a> {
    pub times: &'a [f64],
    /// For each node, `(core, value)` pairs (empty for grid-only nodes).
    pub obs: Vec<&'a [(usize, f64)]>,
}

impl<'a> NodeData<'a> {
    pub fn from_dataset(data: &'a AlignedDataset) -> Self {
        Self {
            times: &data.times,
            obs: data.obs.iter().map(Vec::as_slice).collect(),
        }
    }
}

/// Posterior of the latent field at fixed `θ`: mean and factor of
/// `Q_{x|y} = Q_x + Q_ε`.
#[derive(Debug, Clone)]
pub struct ConditionalField {
    pub mean: Vec<f64>,
    pub chol: BandCholesky,
}

/// Build and factorize the conditional system on the given nodes.
pub(crate) fn condition_nodes(
    nodes: &NodeData<'_>,
    k_factors: &[f64],
    theta: &HyperParams,
    model: &CovarianceModel,
) -> Result<ConditionalField> {
    model.check_domain(theta)?;
    let m = model.m;
    if k_factors.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: k_factors.len(),
        });
    }
    let qt = gmrf::build_increment_precision(nodes.times)?;
    let mut q = gmrf::kronecker_precision(&qt, theta.v2, &model.sigma(theta)?)?;
    let mut rhs = vec![0.0; nodes.times.len() * m];
    for (i, row) in nodes.obs.iter().enumerate() {
        for &(c, y) in row.iter() {
            let prec = 1.0 / (k_factors[c] * theta.sigma2_eps);
            q.add(i * m + c, i * m + c, prec);
            rhs[i * m + c] = prec * y;
        }
    }
    let chol = gmrf::cholesky(&q)?;
    let mean = gmrf::solve(&chol, &rhs)?;
    Ok(ConditionalField { mean, chol })
}

/// Log marginal likelihood `log π(y | θ)` with the latent field integrated
/// out. The improper level of each core is integrated against Lebesgue
/// measure on the level itself, which makes the value comparable across
/// covariance structures and across joint and per-core fits:
///
/// `-(N-m)/2 log 2π - (m/2) Σ log δ_i + ½ Σ log q_ε - (n-1)/2 log|v²Σ|
///  - ½ log|Q_{x|y}| + ½ yᵀQ_ε(μ - y)`.
pub fn log_marginal_likelihood(
    theta: &HyperParams,
    data: &AlignedDataset,
    model: &CovarianceModel,
) -> Result<f64> {
    if data.n_cores() != model.m {
        return Err(Error::DimensionMismatch {
            expected: model.m,
            actual: data.n_cores(),
        });
    }
    let nodes = NodeData::from_dataset(data);
    let field = condition_nodes(&nodes, &data.k_factors, theta, model)?;
    let m = model.m;
    let n = data.n_times();
    let n_obs = data.n_obs();

    let mut log_prec = 0.0;
    let mut fit_term = 0.0;
    for (i, row) in data.obs.iter().enumerate() {
        for &(c, y) in row {
            let prec = 1.0 / (data.k_factors[c] * theta.sigma2_eps);
            log_prec += prec.ln();
            fit_term += prec * y * (field.mean[i * m + c] - y);
        }
    }
    let log_gaps: f64 = data.times.windows(2).map(|w| (w[1] - w[0]).ln()).sum();
    let prior_det = gmrf::generalized_logdet_prior(theta.v2, &model.sigma(theta)?, n)?;

    Ok(-0.5 * (n_obs as f64 - m as f64) * LN_2PI - 0.5 * m as f64 * log_gaps
        + 0.5 * log_prec
        + 0.5 * prior_det
        - 0.5 * field.chol.log_det()
        + 0.5 * fit_term)
}

/// Log prior density in natural coordinates: reference priors `1/v²`,
/// `1/σ²_ε` (and `1/a`), uniform on the `ρ` range. `-∞` outside the domain.
pub fn prior_log_density(theta: &HyperParams, model: &CovarianceModel) -> f64 {
    if model.check_domain(theta).is_err() {
        return f64::NEG_INFINITY;
    }
    let mut lp = -theta.v2.ln() - theta.sigma2_eps.ln();
    if model.has_rho() {
        let (lo, hi) = model.rho_bounds;
        lp -= (hi - lo).ln();
    }
    if let Some(a) = theta.a.filter(|_| model.has_a()) {
        lp -= a.ln();
    }
    lp
}

/// `log π(θ | y)` up to the evidence: marginal likelihood plus log prior.
pub fn log_marginal_posterior(
    theta: &HyperParams,
    data: &AlignedDataset,
    model: &CovarianceModel,
) -> Result<f64> {
    let prior = prior_log_density(theta, model);
    if !prior.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_marginal_likelihood(theta, data, model)? + prior)
}

/// Starting point for the optimizer from per-core linear variogram fits.
pub fn default_init(data: &AlignedDataset, model: &CovarianceModel) -> HyperParams {
    use crate::variogram as vg;
    let mut slopes = Vec::new();
    let mut nugget_ref = None;
    for c in 0..data.n_cores() {
        let Ok(series) = data.core_series(c) else { continue };
        let fit = vg::empirical_semivariogram(&series, vg::default_max_lag(&series), vg::DEFAULT_BINS)
            .and_then(|e| vg::fit_linear_variogram(&e));
        if let Ok(fit) = fit {
            slopes.push(fit.slope.max(0.0));
            if c == data.reference {
                nugget_ref = Some(fit.nugget);
            }
        }
    }
    let values: Vec<f64> = data.obs.iter().flatten().map(|p| p.1).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64)
        .max(1e-12);
    let span = (data.times[data.n_times() - 1] - data.times[0]).max(1e-12);

    let v2 = slopes
        .iter()
        .map(|s| 2.0 * s)
        .filter(|v| *v > 0.0)
        .fold(None, |acc: Option<(f64, usize)>, v| {
            Some(acc.map_or((v, 1), |(s, n)| (s + v, n + 1)))
        })
        .map(|(s, n)| s / n as f64)
        .unwrap_or(var / span)
        .max(1e-3 * var / span);
    let sigma2_eps = nugget_ref
        .filter(|v| *v > 0.0)
        .unwrap_or(0.5 * var)
        .max(1e-3 * var);
    let (lo, hi) = model.rho_bounds;
    HyperParams {
        v2,
        rho: model.has_rho().then_some(0.5 * (lo + hi)),
        sigma2_eps,
        a: model.has_a().then_some(1.0),
    }
}

/// One fitted posterior per independent block of cores: a single block for
/// joint models, one block per core for the separate model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSet {
    pub kind: ModelKind,
    pub labels: Vec<String>,
    pub blocks: Vec<PosteriorBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorBlock {
    /// Core indices of the full dataset covered by this block.
    pub cores: Vec<usize>,
    pub posterior: DiscretePosterior,
}

impl PosteriorSet {
    /// Dataset seen by one block (the full dataset for joint models).
    pub fn block_data(&self, data: &AlignedDataset, block: usize) -> Result<AlignedDataset> {
        let b = &self.blocks[block];
        if b.cores.len() == data.n_cores() {
            Ok(data.clone())
        } else if b.cores.len() == 1 {
            data.single_core(b.cores[0])
        } else {
            Err(invalid("posterior blocks must cover one core or all cores"))
        }
    }
}

/// Fit a model: M1 and M3 jointly, M2 as independent single-core fits.
pub fn fit(
    data: &AlignedDataset,
    kind: ModelKind,
    rho_bounds: (f64, f64),
    init: Option<HyperParams>,
    settings: &GridSettings,
) -> Result<PosteriorSet> {
    let blocks = match kind {
        ModelKind::M2 => (0..data.n_cores())
            .map(|c| {
                let sub = data.single_core(c)?;
                let model = CovarianceModel::with_rho_bounds(ModelKind::M2, 1, rho_bounds)?;
                let start = default_init(&sub, &model);
                let mode = find_mode(&sub, &model, &start, Objective::Posterior)?;
                let posterior = explore_grid(&sub, &model, &mode, settings)?;
                Ok(PosteriorBlock {
                    cores: vec![c],
                    posterior,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        _ => {
            let model = CovarianceModel::with_rho_bounds(kind, data.n_cores(), rho_bounds)?;
            let start = init.unwrap_or_else(|| default_init(data, &model));
            let mode = find_mode(data, &model, &start, Objective::Posterior)?;
            vec![PosteriorBlock {
                cores: (0..data.n_cores()).collect(),
                posterior: explore_grid(data, &model, &mode, settings)?,
            }]
        }
    };
    Ok(PosteriorSet {
        kind,
        labels: data.labels.clone(),
        blocks,
    })
}
