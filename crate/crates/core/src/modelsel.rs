//! BIC comparison of covariance structures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::inference::{default_init, max_log_likelihood, CovarianceModel, HyperParams, ModelKind};
use crate::ingest::AlignedDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub kind: ModelKind,
    pub neg2_loglik: f64,
    pub penalty: f64,
    pub bic: f64,
    /// Number of hyperparameters.
    pub p: usize,
    pub n_obs: usize,
    /// Maximum-likelihood estimates, one per independently fitted block.
    pub estimates: Vec<HyperParams>,
}

/// Fit `kind` by maximum marginal likelihood and score it. The independent
/// structure is fitted core by core, so it carries two parameters per core.
pub fn bic(data: &AlignedDataset, kind: ModelKind, rho_bounds: (f64, f64)) -> Result<ModelScore> {
    let blocks: Vec<AlignedDataset> = match kind {
        ModelKind::M2 => (0..data.n_cores())
            .map(|c| data.single_core(c))
            .collect::<Result<_>>()?,
        _ => vec![data.clone()],
    };
    let fits = blocks
        .par_iter()
        .map(|block| {
            let model = CovarianceModel::with_rho_bounds(kind, block.n_cores(), rho_bounds)?;
            let init = default_init(block, &model);
            let (theta, ll) = max_log_likelihood(block, &model, &init)?;
            Ok((theta, ll, model.n_params()))
        })
        .collect::<Result<Vec<_>>>()?;
    let loglik: f64 = fits.iter().map(|f| f.1).sum();
    let p: usize = fits.iter().map(|f| f.2).sum();
    let n_obs = data.n_obs();
    let penalty = p as f64 * (n_obs as f64).ln();
    Ok(ModelScore {
        kind,
        neg2_loglik: -2.0 * loglik,
        penalty,
        bic: -2.0 * loglik + penalty,
        p,
        n_obs,
        estimates: fits.into_iter().map(|f| f.0).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub score: ModelScore,
    /// BIC minus the best BIC.
    pub delta: f64,
}

/// Ascending BIC; ties keep input order.
pub fn compare(scores: &[ModelScore]) -> Result<Vec<Ranked>> {
    if scores.is_empty() {
        return Err(invalid("nothing to compare"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.bic.total_cmp(&b.bic));
    let best = sorted[0].bic;
    Ok(sorted
        .into_iter()
        .map(|score| Ranked {
            delta: score.bic - best,
            score,
        })
        .collect())
}
