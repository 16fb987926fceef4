//! End-to-end runs driven by a single [`RunConfig`].
//!
//! Every file written here starts with (CSV) or contains (JSON) the SHA-256
//! of the serialized configuration and the seed, so any artifact can be
//! traced back to the run that produced it. Floats are written with 17
//! significant digits and runs are deterministic for a fixed config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{coverage_study, simulate_dataset, SimSpec};
use crate::error::{invalid, Error, Result};
use crate::fmt::{float, to_json};
use crate::imputation::{mixture_marginals, ImputationGrid, DEFAULT_GRID_STEP};
use crate::inference::{
    self, smooth_marginal, CovarianceModel, GridSettings, GridSummary, HyperParams, ModelKind,
    PosteriorSet,
};
use crate::ingest::{self, align, restrict, AlignedDataset, CoreSeries};
use crate::modelsel;
use crate::paths::{ensemble_summary, path_min, sample_paths, Quartiles};
use crate::rng::derive_seed;
use crate::variogram as vg;

/// Pipeline entry points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Variogram,
    Fit,
    Impute,
    Sample,
    Event,
    Compare,
    Calibrate,
    Simulate,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Variogram,
        Command::Fit,
        Command::Impute,
        Command::Sample,
        Command::Event,
        Command::Compare,
        Command::Calibrate,
        Command::Simulate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Variogram => "variogram",
            Command::Fit => "fit",
            Command::Impute => "impute",
            Command::Sample => "sample",
            Command::Event => "event",
            Command::Compare => "compare",
            Command::Calibrate => "calibrate",
            Command::Simulate => "simulate",
        }
    }

    fn reads_cores(self) -> bool {
        !matches!(self, Command::Calibrate | Command::Simulate)
    }

    fn reads_posterior(self) -> bool {
        matches!(self, Command::Impute | Command::Sample | Command::Event)
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSpec {
    pub path: PathBuf,
    /// Overrides the sidecar's id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_id: Option<String>,
    /// Overrides the sidecar's section length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_length_cm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Defaults to the first observed time, rounded down to the step.
    pub start: Option<f64>,
    /// Defaults to the last observed time.
    pub end: Option<f64>,
    pub step: f64,
    pub include_end: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            start: None,
            end: None,
            step: DEFAULT_GRID_STEP,
            include_end: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariogramSpec {
    /// Defaults to a third of each core's span.
    pub max_lag: Option<f64>,
    pub bins: usize,
}

impl Default for VariogramSpec {
    fn default() -> Self {
        Self {
            max_lag: None,
            bins: vg::DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSpec {
    pub count: usize,
    /// Window searched for the minimum by `event`, in k yr.
    pub event_window: (f64, f64),
}

impl Default for PathSpec {
    fn default() -> Self {
        Self {
            count: 1000,
            event_window: (7.90, 8.50),
        }
    }
}

/// Simulation design for `simulate` and `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub theta_true: HyperParams,
    pub n_fine: usize,
    pub fine_step: f64,
    pub windows: Vec<usize>,
    pub strides: Vec<usize>,
    pub offsets: Vec<usize>,
    pub start_time: f64,
    pub replicates: usize,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            theta_true: HyperParams::new(0.2, Some(0.9), 0.5),
            n_fine: 1000,
            fine_step: 0.05,
            windows: vec![2, 3],
            strides: vec![8, 10],
            offsets: vec![0, 3],
            start_time: 0.0,
            replicates: 200,
        }
    }
}

/// Everything a run needs. Precedence when assembling one: command-line
/// flags, then the config file, then these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cores: Vec<CoreSpec>,
    /// Defaults to the first core.
    pub reference_core: Option<String>,
    pub time_tolerance: f64,
    pub model: ModelKind,
    /// Restrict the data to `[t_min, t_max]` (k yr).
    pub window: Option<(f64, f64)>,
    pub grid: GridSpec,
    pub exploration: GridSettings,
    pub rho_bounds: (f64, f64),
    /// Optimizer start; defaults to variogram-based values.
    pub init: Option<HyperParams>,
    pub seed: u64,
    /// Posterior JSON read by `impute`, `sample` and `event`; defaults to
    /// `posterior.json` in the output directory.
    pub posterior: Option<PathBuf>,
    pub variogram: VariogramSpec,
    pub paths: PathSpec,
    pub compare_models: Vec<ModelKind>,
    pub simulation: SimulationSpec,
    /// Where artifacts go. Not part of the provenance hash.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cores: Vec::new(),
            reference_core: None,
            time_tolerance: ingest::DEFAULT_TIME_TOLERANCE,
            model: ModelKind::M1,
            window: None,
            grid: GridSpec::default(),
            exploration: GridSettings::default(),
            rho_bounds: (0.5, 1.0),
            init: None,
            seed: 42,
            posterior: None,
            variogram: VariogramSpec::default(),
            paths: PathSpec::default(),
            compare_models: vec![ModelKind::M1, ModelKind::M2, ModelKind::M3],
            simulation: SimulationSpec::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Check the configuration for `command`, reporting every problem.
    pub fn validate(&self, command: Command) -> Result<()> {
        let mut p = Vec::new();
        if command.reads_cores() && self.cores.is_empty() {
            p.push(format!("`{}` needs at least one core file", command.name()));
        }
        if !(self.time_tolerance >= 0.0 && self.time_tolerance.is_finite()) {
            p.push("time_tolerance must be a non-negative number".into());
        }
        if let Some((a, b)) = self.window {
            if !(a < b) {
                p.push(format!("window start {a} must be below its end {b}"));
            }
        }
        let g = &self.grid;
        if !(g.step > 0.0 && g.step.is_finite()) {
            p.push("grid step must be positive".into());
        }
        if let (Some(a), Some(b)) = (g.start, g.end) {
            if !(a < b) {
                p.push(format!("grid start {a} must be below grid end {b}"));
            }
        }
        let e = &self.exploration;
        if !(e.delta_z > 0.0 && e.delta_z.is_finite()) {
            p.push("exploration delta_z must be positive".into());
        }
        if !(e.delta_pi >= 0.0 && e.delta_pi.is_finite()) {
            p.push("exploration delta_pi must be non-negative".into());
        }
        if e.max_points == 0 {
            p.push("exploration max_points must be at least 1".into());
        }
        let (lo, hi) = self.rho_bounds;
        if !(lo < hi && lo > -1.0 && hi <= 1.0) {
            p.push(format!("rho_bounds ({lo}, {hi}) must satisfy -1 < lo < hi <= 1"));
        }
        if self.variogram.bins < 2 {
            p.push("variogram bins must be at least 2".into());
        }
        if let Some(l) = self.variogram.max_lag {
            if !(l > 0.0) {
                p.push("variogram max_lag must be positive".into());
            }
        }
        if matches!(command, Command::Sample | Command::Event) && self.paths.count == 0 {
            p.push("path count must be at least 1".into());
        }
        let (a, b) = self.paths.event_window;
        if command == Command::Event && !(a < b) {
            p.push(format!("event window start {a} must be below its end {b}"));
        }
        if command == Command::Compare && self.compare_models.is_empty() {
            p.push("compare_models must list at least one model".into());
        }
        if matches!(command, Command::Simulate | Command::Calibrate) {
            match self.sim_spec() {
                Ok(spec) => {
                    if let Err(Error::Config(more)) = spec.validate() {
                        p.extend(more.into_iter().map(|m| format!("simulation: {m}")));
                    }
                }
                Err(err) => p.push(format!("simulation: {err}")),
            }
            if command == Command::Calibrate && self.simulation.replicates == 0 {
                p.push("simulation replicates must be at least 1".into());
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn sim_spec(&self) -> Result<SimSpec> {
        let s = &self.simulation;
        Ok(SimSpec {
            theta_true: s.theta_true,
            model: CovarianceModel::with_rho_bounds(
                self.model,
                s.windows.len().max(1),
                self.rho_bounds,
            )?,
            n_fine: s.n_fine,
            fine_step: s.fine_step,
            windows: s.windows.clone(),
            strides: s.strides.clone(),
            offsets: s.offsets.clone(),
            start_time: s.start_time,
            seed: self.seed,
            replicates: s.replicates,
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            config_sha256: self.hash(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

/// A JSON artifact: provenance, the config, then the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_sha256: String,
    pub seed: u64,
    pub config: RunConfig,
    #[serde(flatten)]
    pub body: T,
}

/// Payload of `posterior.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorArtifact {
    pub posterior: PosteriorSet,
    /// Per block, per hyperparameter.
    pub summaries: Vec<Vec<GridSummary>>,
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Human-readable summary for the terminal.
    pub summary: String,
}

struct Output<'a> {
    dir: &'a Path,
    prov: Provenance,
    config: &'a RunConfig,
    files: Vec<PathBuf>,
}

impl<'a> Output<'a> {
    fn new(config: &'a RunConfig) -> Result<Self> {
        fs::create_dir_all(&config.output_dir).map_err(|source| Error::Io {
            path: config.output_dir.clone(),
            source,
        })?;
        Ok(Self {
            dir: &config.output_dir,
            prov: config.provenance(),
            config,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(path.clone());
        Ok(path)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut buf = format!(
            "# config_sha256={}\n# seed={}\n",
            self.prov.config_sha256, self.prov.seed
        )
        .into_bytes();
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row)?;
            }
            w.flush().map_err(|source| Error::Io {
                path: self.dir.join(name),
                source,
            })?;
        }
        self.write(name, &buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, body: T) -> Result<PathBuf> {
        let env = Envelope {
            config_sha256: self.prov.config_sha256.clone(),
            seed: self.prov.seed,
            config: self.config.clone(),
            body,
        };
        let text = to_json(&env)?;
        self.write(name, text.as_bytes())
    }

    fn finish(self, summary: String) -> RunReport {
        RunReport {
            files: self.files,
            summary,
        }
    }
}

/// Load, align and window the configured cores.
pub fn load_dataset(config: &RunConfig) -> Result<AlignedDataset> {
    let cores = config
        .cores
        .iter()
        .map(|spec| {
            let mut series = ingest::load_core(&spec.path)?;
            if let Some(id) = &spec.core_id {
                series.core_id = id.clone();
            }
            if spec.section_length_cm.is_some() {
                series.section_length = spec.section_length_cm;
            }
            Ok(series)
        })
        .collect::<Result<Vec<CoreSeries>>>()?;
    let reference = match &config.reference_core {
        Some(r) => r.clone(),
        None => cores
            .first()
            .map(|c| c.core_id.clone())
            .ok_or_else(|| invalid("no cores configured"))?,
    };
    let data = align(&cores, &reference, config.time_tolerance)?;
    match config.window {
        Some((a, b)) => restrict(&data, a, b),
        None => Ok(data),
    }
}

/// Imputation grid from the config, defaulting to the data's span.
pub fn imputation_grid(config: &RunConfig, data: &AlignedDataset) -> Result<ImputationGrid> {
    let g = &config.grid;
    let first = data.times[0];
    let last = data.times[data.n_times() - 1];
    let start = g.start.unwrap_or_else(|| (first / g.step).floor() * g.step);
    let end = g.end.unwrap_or(last);
    ImputationGrid::new(start, end, g.step, g.include_end)
}

/// Run `command` with `config`, writing artifacts to `config.output_dir`.
pub fn run(command: Command, config: &RunConfig) -> Result<RunReport> {
    config.validate(command)?;
    let data = if command.reads_cores() {
        Some(load_dataset(config)?)
    } else {
        None
    };
    let posterior = if command.reads_posterior() {
        Some(read_posterior(config)?)
    } else {
        None
    };
    let out = Output::new(config)?;
    match command {
        Command::Variogram => run_variogram(out, data.as_ref().expect("loaded")),
        Command::Fit => run_fit(out, data.as_ref().expect("loaded")),
        Command::Impute => run_impute(out, data.as_ref().expect("loaded"), &posterior.expect("read")),
        Command::Sample => run_sample(out, data.as_ref().expect("loaded"), &posterior.expect("read")),
        Command::Event => run_event(out, data.as_ref().expect("loaded"), &posterior.expect("read")),
        Command::Compare => run_compare(out, data.as_ref().expect("loaded")),
        Command::Calibrate => run_calibrate(out),
        Command::Simulate => run_simulate(out),
    }
}

fn read_posterior(config: &RunConfig) -> Result<PosteriorSet> {
    let path = config
        .posterior
        .clone()
        .unwrap_or_else(|| config.output_dir.join("posterior.json"));
    let text = fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let env: Envelope<PosteriorArtifact> = serde_json::from_str(&text)?;
    Ok(env.body.posterior)
}

fn safe_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn run_variogram(mut out: Output<'_>, data: &AlignedDataset) -> Result<RunReport> {
    #[derive(Serialize)]
    struct FitBody<'a> {
        core: &'a str,
        n_obs: usize,
        k_factor: f64,
        max_lag: f64,
        nugget: f64,
        slope: f64,
        v2: f64,
        iterations: usize,
        converged: bool,
        weighted_rss: f64,
    }
    let spec = out.config.variogram;
    let mut summary = String::new();
    for c in 0..data.n_cores() {
        let series = data.core_series(c)?;
        let label = &data.labels[c];
        let max_lag = spec.max_lag.unwrap_or_else(|| vg::default_max_lag(&series));
        let emp = vg::empirical_semivariogram(&series, max_lag, spec.bins)?;
        let fit = vg::fit_linear_variogram(&emp)?;
        let inc = vg::standardized_increments(&series, &fit)?;
        let name = safe_name(label);
        let rows: Vec<Vec<String>> = emp
            .bins
            .iter()
            .map(|b| vec![float(b.lag), float(b.gamma), b.n_pairs.to_string()])
            .collect();
        out.csv(&format!("variogram_{name}.csv"), &["lag", "gamma", "n_pairs"], &rows)?;
        let qq: Vec<Vec<String>> = inc.qq.iter().map(|(t, s)| vec![float(*t), float(*s)]).collect();
        out.csv(&format!("qq_{name}.csv"), &["theoretical_q", "sample_q"], &qq)?;
        out.json(
            &format!("variogram_{name}.json"),
            FitBody {
                core: label,
                n_obs: series.len(),
                k_factor: data.k_factors[c],
                max_lag,
                nugget: fit.nugget,
                slope: fit.slope,
                v2: fit.v2(),
                iterations: fit.iterations,
                converged: fit.converged,
                weighted_rss: fit.weighted_rss,
            },
        )?;
        let _ = writeln!(
            summary,
            "{label}: n = {}, nugget = {}, slope = {}, v2 = {}",
            series.len(),
            float(fit.nugget),
            float(fit.slope),
            float(fit.v2())
        );
    }
    Ok(out.finish(summary))
}

fn run_fit(mut out: Output<'_>, data: &AlignedDataset) -> Result<RunReport> {
    let cfg = out.config;
    let set = inference::fit(data, cfg.model, cfg.rho_bounds, cfg.init, &cfg.exploration)?;
    let summaries: Vec<Vec<GridSummary>> =
        set.blocks.iter().map(|b| b.posterior.summaries()).collect();

    let mut density_rows = Vec::new();
    for (bi, block) in set.blocks.iter().enumerate() {
        let post = &block.posterior;
        let cores: Vec<&str> = block.cores.iter().map(|&c| data.labels[c].as_str()).collect();
        for (k, name) in post.model.param_names().into_iter().enumerate() {
            // a single support point has no density to draw
            let Ok(curve) = smooth_marginal(post, k) else { continue };
            for (x, d) in curve {
                density_rows.push(vec![
                    bi.to_string(),
                    cores.join(";"),
                    name.to_string(),
                    float(x),
                    float(d),
                ]);
            }
        }
    }
    out.csv(
        "posterior_density.csv",
        &["block", "cores", "parameter", "value", "density"],
        &density_rows,
    )?;

    let mut summary = String::new();
    for (block, sums) in set.blocks.iter().zip(&summaries) {
        let cores: Vec<&str> = block.cores.iter().map(|&c| data.labels[c].as_str()).collect();
        let _ = writeln!(
            summary,
            "{} [{}]: {} grid points, log evidence {}",
            set.kind,
            cores.join(", "),
            block.posterior.len(),
            float(block.posterior.log_evidence)
        );
        for s in sums {
            let _ = writeln!(
                summary,
                "  {:<10} median {}  50% [{}, {}]",
                s.name,
                float(s.q50),
                float(s.q25),
                float(s.q75)
            );
        }
    }
    out.json(
        "posterior.json",
        PosteriorArtifact {
            posterior: set,
            summaries,
        },
    )?;
    Ok(out.finish(summary))
}

fn check_labels(set: &PosteriorSet, data: &AlignedDataset) -> Result<()> {
    if set.labels != data.labels {
        return Err(invalid(format!(
            "posterior was fitted to cores [{}] but the data has [{}]",
            set.labels.join(", "),
            data.labels.join(", ")
        )));
    }
    Ok(())
}

fn run_impute(mut out: Output<'_>, data: &AlignedDataset, set: &PosteriorSet) -> Result<RunReport> {
    check_labels(set, data)?;
    let grid = imputation_grid(out.config, data)?;
    let times = grid.times();
    let m = data.n_cores();
    // rows[l][c]
    let mut table: Vec<Vec<Option<Vec<String>>>> = vec![vec![None; m]; times.len()];
    for b in 0..set.blocks.len() {
        let block = &set.blocks[b];
        let block_data = set.block_data(data, b)?;
        let mix = mixture_marginals(&block.posterior, &block_data, &grid)?;
        let rows: Vec<Vec<Option<Vec<String>>>> = (0..times.len())
            .into_par_iter()
            .map(|l| {
                (0..block.cores.len())
                    .map(|local| {
                        let comps = mix.at(l, local);
                        let q = |p| crate::imputation::mixture_quantile(&comps, p);
                        Ok(Some(vec![
                            float(times[l]),
                            data.labels[block.cores[local]].clone(),
                            float(crate::imputation::mixture_mean(&comps)),
                            float(crate::imputation::mixture_variance(&comps)),
                            float(q(0.025)?),
                            float(q(0.25)?),
                            float(q(0.5)?),
                            float(q(0.75)?),
                            float(q(0.975)?),
                        ]))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (l, row) in rows.into_iter().enumerate() {
            for (local, cell) in row.into_iter().enumerate() {
                table[l][block.cores[local]] = cell;
            }
        }
    }
    let rows: Vec<Vec<String>> = table.into_iter().flatten().flatten().collect();
    out.csv(
        "imputed.csv",
        &["time", "core", "mean", "variance", "q025", "q25", "q50", "q75", "q975"],
        &rows,
    )?;
    let summary = format!(
        "imputed {} grid times x {} cores ({} to {}, step {})\n",
        times.len(),
        m,
        float(grid.start),
        float(*times.last().unwrap_or(&grid.start)),
        float(grid.step)
    );
    Ok(out.finish(summary))
}

/// Paths for every block on `times`; returns `(global core, path, time
/// index, value)` tuples through the per-block ensembles.
fn block_ensembles(
    config: &RunConfig,
    data: &AlignedDataset,
    set: &PosteriorSet,
    times: &[f64],
) -> Result<Vec<(Vec<usize>, crate::paths::PathEnsemble)>> {
    (0..set.blocks.len())
        .map(|b| {
            let block = &set.blocks[b];
            let block_data = set.block_data(data, b)?;
            let seed = derive_seed(config.seed, b as u64);
            let ens = sample_paths(&block.posterior, &block_data, times, config.paths.count, seed)?;
            Ok((block.cores.clone(), ens))
        })
        .collect()
}

fn run_sample(mut out: Output<'_>, data: &AlignedDataset, set: &PosteriorSet) -> Result<RunReport> {
    check_labels(set, data)?;
    let grid = imputation_grid(out.config, data)?;
    let times = grid.times();
    let ensembles = block_ensembles(out.config, data, set, &times)?;
    let mut rows = Vec::new();
    for s in 0..out.config.paths.count {
        for (l, t) in times.iter().enumerate() {
            for (cores, ens) in &ensembles {
                for (local, &c) in cores.iter().enumerate() {
                    rows.push(vec![
                        s.to_string(),
                        float(*t),
                        data.labels[c].clone(),
                        float(ens.value(s, l, local)),
                    ]);
                }
            }
        }
    }
    out.csv("paths.csv", &["path_id", "time", "core", "value"], &rows)?;
    let summary = format!(
        "{} paths over {} grid times for {} cores\n",
        out.config.paths.count,
        times.len(),
        data.n_cores()
    );
    Ok(out.finish(summary))
}

fn run_event(mut out: Output<'_>, data: &AlignedDataset, set: &PosteriorSet) -> Result<RunReport> {
    #[derive(Serialize)]
    struct CoreEvent<'a> {
        core: &'a str,
        n_paths: usize,
        x_min: Quartiles,
        t_min: Quartiles,
    }
    #[derive(Serialize)]
    struct EventBody<'a> {
        window: (f64, f64),
        grid_step: f64,
        grid_points: usize,
        cores: Vec<CoreEvent<'a>>,
    }
    check_labels(set, data)?;
    let cfg = out.config;
    let window = cfg.paths.event_window;
    let grid = ImputationGrid::new(window.0, window.1, cfg.grid.step, cfg.grid.include_end)?;
    let times = grid.times();
    let ensembles = block_ensembles(cfg, data, set, &times)?;

    let mut per_core = vec![None; data.n_cores()];
    for (cores, ens) in &ensembles {
        for (local, &c) in cores.iter().enumerate() {
            per_core[c] = Some(path_min(ens, local, window)?);
        }
    }
    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut summary = String::new();
    for (c, samples) in per_core.iter().enumerate() {
        let samples = samples.as_ref().ok_or_else(|| invalid("core missing from posterior"))?;
        for (s, (x, t)) in samples.iter().enumerate() {
            rows.push(vec![s.to_string(), data.labels[c].clone(), float(*x), float(*t)]);
        }
        let sum = ensemble_summary(samples)?;
        let _ = writeln!(
            summary,
            "{}: t_min quartiles ({}, {}, {}), x_min median {}",
            data.labels[c],
            float(sum.t_min.q25),
            float(sum.t_min.q50),
            float(sum.t_min.q75),
            float(sum.x_min.q50)
        );
        events.push(CoreEvent {
            core: &data.labels[c],
            n_paths: samples.len(),
            x_min: sum.x_min,
            t_min: sum.t_min,
        });
    }
    out.csv("event.csv", &["path_id", "core", "x_min", "t_min"], &rows)?;
    out.json(
        "event_summary.json",
        EventBody {
            window,
            grid_step: grid.step,
            grid_points: times.len(),
            cores: events,
        },
    )?;
    Ok(out.finish(summary))
}

fn run_compare(mut out: Output<'_>, data: &AlignedDataset) -> Result<RunReport> {
    let cfg = out.config;
    let scores = cfg
        .compare_models
        .iter()
        .map(|&kind| modelsel::bic(data, kind, cfg.rho_bounds))
        .collect::<Result<Vec<_>>>()?;
    let ranking = modelsel::compare(&scores)?;
    let rows: Vec<Vec<String>> = ranking
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.score.kind.to_string(),
                r.score.p.to_string(),
                r.score.n_obs.to_string(),
                float(r.score.neg2_loglik),
                float(r.score.penalty),
                float(r.score.bic),
                float(r.delta),
            ]
        })
        .collect();
    out.csv(
        "compare.csv",
        &["rank", "model", "p", "n_obs", "neg2_loglik", "penalty", "bic", "delta"],
        &rows,
    )?;
    let mut summary = format!(
        "{:<5} {:<6} {:>3} {:>14} {:>10} {:>14} {:>10}\n",
        "rank", "model", "p", "-2logL", "penalty", "BIC", "delta"
    );
    for (i, r) in ranking.iter().enumerate() {
        let _ = writeln!(
            summary,
            "{:<5} {:<6} {:>3} {:>14.3} {:>10.3} {:>14.3} {:>10.3}",
            i + 1,
            r.score.kind,
            r.score.p,
            r.score.neg2_loglik,
            r.score.penalty,
            r.score.bic,
            r.delta
        );
    }
    Ok(out.finish(summary))
}

fn run_calibrate(mut out: Output<'_>) -> Result<RunReport> {
    let spec = out.config.sim_spec()?;
    let table = coverage_study(&spec, &out.config.exploration)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.parameter.clone(),
                r.trials.to_string(),
                r.inside_50.to_string(),
                r.inside_90.to_string(),
                float(r.prop_50()),
                float(r.prop_90()),
            ]
        })
        .collect();
    out.csv(
        "coverage.csv",
        &["parameter", "trials", "inside_50", "inside_90", "prop_50", "prop_90"],
        &rows,
    )?;
    let mut summary = format!(
        "{} replicates, {} failed\n",
        table.replicates, table.failures
    );
    for r in &table.rows {
        let _ = writeln!(
            summary,
            "  {:<10} 50%: {:.3}  90%: {:.3}",
            r.parameter,
            r.prop_50(),
            r.prop_90()
        );
    }
    Ok(out.finish(summary))
}

fn run_simulate(mut out: Output<'_>) -> Result<RunReport> {
    let spec = out.config.sim_spec()?;
    let (data, truth) = simulate_dataset(&spec)?;
    let prov = out.prov.clone();
    for c in 0..data.n_cores() {
        let series = data.core_series(c)?;
        let path = out.dir.join(format!("sim_{}.csv", safe_name(&data.labels[c])));
        ingest::write_core(&series, &path, Some((&prov.config_sha256, prov.seed)))?;
        out.files.push(path.clone());
        out.files.push(ingest::sidecar_path(&path));
    }
    let mut rows = Vec::with_capacity(truth.times.len() * data.n_cores());
    for (i, t) in truth.times.iter().enumerate() {
        for c in 0..data.n_cores() {
            rows.push(vec![float(*t), data.labels[c].clone(), float(truth.x[c][i])]);
        }
    }
    out.csv("truth.csv", &["time", "core", "x"], &rows)?;
    let summary = format!(
        "simulated {} cores with {:?} observations\n",
        data.n_cores(),
        data.counts_per_core()
    );
    Ok(out.finish(summary))
}
