//! Simulation from known hyperparameters and credible-interval coverage.
//!
//! The latent process is simulated on a fine regular grid, observed with
//! white noise at every fine step, and each core's record is then averaged
//! over consecutive blocks of `w_c` fine steps, mimicking the physical
//! sampling of ice sections. Averaging shrinks the noise variance by `w_c`,
//! so cores with longer sections get proportionally smaller nuggets.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imputation::{mixture_marginals_at, mixture_quantile};
use crate::inference::{self, CovarianceModel, GridSettings, HyperParams};
use crate::ingest::{align, AlignedDataset, CoreSeries};
use crate::rng::{derive_seed, stream_rng};

/// Number of `x` probes per core and replicate.
pub const PROBES_PER_CORE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub theta_true: HyperParams,
    pub model: CovarianceModel,
    /// Number of fine-scale steps.
    pub n_fine: usize,
    /// Length of one fine step in k yr.
    pub fine_step: f64,
    /// Averaging window per core, in fine steps; core 0 is the reference.
    pub windows: Vec<usize>,
    /// Fine steps between the starts of consecutive blocks, per core.
    /// Empty means contiguous blocks (stride = window).
    #[serde(default)]
    pub strides: Vec<usize>,
    /// Fine steps skipped before each core's first block. Empty means zero.
    #[serde(default)]
    pub offsets: Vec<usize>,
    pub start_time: f64,
    pub seed: u64,
    pub replicates: usize,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.windows.len() != self.model.m {
            problems.push(format!(
                "{} windows given for {} cores",
                self.windows.len(),
                self.model.m
            ));
        }
        for (name, v) in [("strides", &self.strides), ("offsets", &self.offsets)] {
            if !v.is_empty() && v.len() != self.windows.len() {
                problems.push(format!("{name} must be empty or give one value per core"));
            }
        }
        for (c, &w) in self.windows.iter().enumerate() {
            let stride = self.stride(c);
            if w == 0 {
                problems.push(format!("window of core {c} must be at least 1"));
            } else if stride < w {
                problems.push(format!("stride of core {c} is shorter than its window"));
            } else if self.strides.is_empty() && self.offsets.is_empty() && self.n_fine % w != 0 {
                problems.push(format!(
                    "window {w} of core {c} does not divide n_fine = {}",
                    self.n_fine
                ));
            } else if self.n_blocks(c) < 2 {
                problems.push(format!("core {c} would get fewer than two observations"));
            }
        }
        if !(self.fine_step > 0.0 && self.fine_step.is_finite()) {
            problems.push("fine_step must be positive".into());
        }
        let th = &self.theta_true;
        if !(th.v2 >= 0.0 && th.sigma2_eps >= 0.0) {
            problems.push("simulation variances must be non-negative".into());
        }
        if self.model.has_rho() && !th.rho.is_some_and(|r| (-1.0..=1.0).contains(&r)) {
            problems.push("rho must be given and lie in [-1, 1]".into());
        }
        if self.model.has_a() && !th.a.is_some_and(|a| a >= 0.0) {
            problems.push("a must be given and non-negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn stride(&self, c: usize) -> usize {
        self.strides.get(c).copied().unwrap_or(self.windows[c])
    }

    fn offset(&self, c: usize) -> usize {
        self.offsets.get(c).copied().unwrap_or(0)
    }

    /// Number of observations core `c` receives.
    pub fn n_blocks(&self, c: usize) -> usize {
        let (w, stride, off) = (self.windows[c], self.stride(c), self.offset(c));
        if stride == 0 || off + w > self.n_fine {
            0
        } else {
            (self.n_fine - off - w) / stride + 1
        }
    }

    pub fn fine_time(&self, i: usize) -> f64 {
        self.start_time + i as f64 * self.fine_step
    }
}

/// Simulated latent process on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTruth {
    pub times: Vec<f64>,
    /// Per core, the latent value at each fine time.
    pub x: Vec<Vec<f64>>,
}

impl LatentTruth {
    /// Latent value of core `c` at the fine time closest to `t`.
    pub fn at(&self, c: usize, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s < t);
        let i = if i == self.times.len()
            || (i > 0 && (t - self.times[i - 1]) <= (self.times[i] - t))
        {
            i - 1
        } else {
            i
        };
        self.x[c][i]
    }
}

/// Lower Cholesky factor of a positive semi-definite matrix; zero pivots
/// give zero columns.
fn psd_cholesky(s: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let m = s.nrows();
    let mut l = nalgebra::DMatrix::zeros(m, m);
    for j in 0..m {
        let d = s[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        let ljj = if d > 1e-14 * s[(j, j)].abs().max(1e-300) { d.sqrt() } else { 0.0 };
        l[(j, j)] = ljj;
        for i in j + 1..m {
            let v = s[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = if ljj > 0.0 { v / ljj } else { 0.0 };
        }
    }
    l
}

/// Simulate one dataset and its latent truth.
pub fn simulate_dataset(spec: &SimSpec) -> Result<(AlignedDataset, LatentTruth)> {
    spec.validate()?;
    simulate_with_seed(spec, spec.seed)
}

fn simulate_with_seed(spec: &SimSpec, seed: u64) -> Result<(AlignedDataset, LatentTruth)> {
    let m = spec.model.m;
    let th = &spec.theta_true;
    let chol = psd_cholesky(&spec.model.sigma(th)?);
    let step_sd = (th.v2 * spec.fine_step).sqrt();
    // per-fine-step noise of the reference core
    let annual_sd = (th.sigma2_eps * spec.windows[0] as f64).sqrt();

    let mut rng = stream_rng(seed, 0);
    let times: Vec<f64> = (0..spec.n_fine).map(|i| spec.fine_time(i)).collect();
    let mut x = vec![vec![0.0; spec.n_fine]; m];
    let mut z = vec![0.0; m];
    for i in 1..spec.n_fine {
        for zc in z.iter_mut() {
            *zc = rng.sample(StandardNormal);
        }
        for c in 0..m {
            let inc: f64 = (0..=c).map(|k| chol[(c, k)] * z[k]).sum();
            x[c][i] = x[c][i - 1] + step_sd * inc;
        }
    }

    let mut cores = Vec::with_capacity(m);
    for c in 0..m {
        let mut noise_rng = stream_rng(seed, 1 + c as u64);
        let w = spec.windows[c];
        let (mut ts, mut ys) = (Vec::new(), Vec::new());
        for b in 0..spec.n_blocks(c) {
            let first = spec.offset(c) + b * spec.stride(c);
            let block = first..first + w;
            let sum: f64 = block
                .clone()
                .map(|i| x[c][i] + annual_sd * noise_rng.sample::<f64, _>(StandardNormal))
                .sum();
            ts.push(spec.fine_time(first) + 0.5 * (w - 1) as f64 * spec.fine_step);
            ys.push(sum / w as f64);
        }
        cores.push(CoreSeries::new(format!("core{c}"), ts, ys, Some(w as f64))?);
    }
    let data = align(&cores, "core0", crate::ingest::DEFAULT_TIME_TOLERANCE)?;
    Ok((data, LatentTruth { times, x }))
}

/// Containment counts for one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub parameter: String,
    pub trials: usize,
    pub inside_50: usize,
    pub inside_90: usize,
}

impl CoverageRow {
    pub fn prop_50(&self) -> f64 {
        self.inside_50 as f64 / self.trials as f64
    }

    pub fn prop_90(&self) -> f64 {
        self.inside_90 as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    /// `x` first, then the hyperparameters.
    pub rows: Vec<CoverageRow>,
    pub replicates: usize,
    pub failures: usize,
}

struct ReplicateHits {
    /// Per row: (trials, in 50%, in 90%).
    rows: Vec<(usize, usize, usize)>,
}

fn contains((lo, hi): (f64, f64), v: f64) -> bool {
    lo <= v && v <= hi
}

fn replicate(spec: &SimSpec, settings: &GridSettings, r: usize) -> Result<ReplicateHits> {
    let (data, truth) = simulate_with_seed(spec, derive_seed(spec.seed, r as u64))?;
    let set = inference::fit(&data, spec.model.kind, spec.model.rho_bounds, None, settings)?;
    if set.blocks.len() != 1 {
        return Err(invalid("coverage study needs a joint covariance model"));
    }
    let post = &set.blocks[0].posterior;
    let m = spec.model.m;

    // probes evenly spaced over the fine indices inside the observed span
    let first = data.times[0];
    let last = data.times[data.n_times() - 1];
    let lo_i = ((first - spec.start_time) / spec.fine_step).ceil() as usize;
    let hi_i = ((last - spec.start_time) / spec.fine_step).floor() as usize;
    let probe_times: Vec<f64> = (0..PROBES_PER_CORE)
        .map(|k| {
            let i = lo_i + (hi_i - lo_i) * k / (PROBES_PER_CORE - 1);
            spec.fine_time(i)
        })
        .collect();
    let mix = mixture_marginals_at(post, &data, &probe_times)?;

    let mut x_row = (0, 0, 0);
    for (l, &t) in probe_times.iter().enumerate() {
        for c in 0..m {
            let comps = mix.at(l, c);
            let q = |p| mixture_quantile(&comps, p);
            let truth_x = truth.at(c, t);
            x_row.0 += 1;
            x_row.1 += usize::from(contains((q(0.25)?, q(0.75)?), truth_x));
            x_row.2 += usize::from(contains((q(0.05)?, q(0.95)?), truth_x));
        }
    }
    let mut rows = vec![x_row];
    let truth_theta = spec.model.natural(&spec.theta_true);
    for (k, v) in truth_theta.into_iter().enumerate() {
        rows.push((
            1,
            usize::from(contains(post.credible_interval(k, 0.5), v)),
            usize::from(contains(post.credible_interval(k, 0.9), v)),
        ));
    }
    Ok(ReplicateHits { rows })
}

/// Simulate, fit and check interval containment over `spec.replicates`
/// replicates. Failed replicates are excluded and counted; more than 5%
/// failures is an error.
pub fn coverage_study(spec: &SimSpec, settings: &GridSettings) -> Result<CoverageTable> {
    spec.validate()?;
    if spec.replicates == 0 {
        return Err(invalid("coverage study needs at least one replicate"));
    }
    let results: Vec<Result<ReplicateHits>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| replicate(spec, settings, r))
        .collect();
    let failures = results.iter().filter(|r| r.is_err()).count();
    for (r, res) in results.iter().enumerate() {
        if let Err(e) = res {
            log::warn!("replicate {r} failed: {e}");
        }
    }
    if failures * 20 > spec.replicates {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: spec.replicates,
        });
    }
    let mut names = vec!["x".to_string()];
    names.extend(spec.model.param_names().into_iter().map(String::from));
    let mut rows: Vec<CoverageRow> = names
        .into_iter()
        .map(|parameter| CoverageRow {
            parameter,
            trials: 0,
            inside_50: 0,
            inside_90: 0,
        })
        .collect();
    for hits in results.iter().flatten() {
        for (row, h) in rows.iter_mut().zip(&hits.rows) {
            row.trials += h.0;
            row.inside_50 += h.1;
            row.inside_90 += h.2;
        }
    }
    Ok(CoverageTable {
        rows,
        replicates: spec.replicates,
        failures,
    })
}
