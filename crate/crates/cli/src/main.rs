use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jointseries::inference::ModelKind;
use jointseries::pipeline::{self, Command, CoreSpec, RunConfig};
use jointseries::Error;

#[derive(Parser)]
#[command(
    name = "jointseries",
    version,
    about = "Joint Bayesian imputation of misaligned proxy time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Empirical semivariograms, nugget/slope fits and QQ data per core.
    Variogram(Opts),
    /// Fit the hyperparameter posterior and write posterior.json.
    Fit(Opts),
    /// Posterior mixture marginals on the imputation grid.
    Impute(Opts),
    /// Joint sample paths on the imputation grid.
    Sample(Opts),
    /// Minimum and its timing inside the event window, per sample path.
    Event(Opts),
    /// Rank covariance structures by BIC.
    Compare(Opts),
    /// Credible-interval coverage over simulated replicates.
    Calibrate(Opts),
    /// Write one synthetic dataset and its latent truth.
    Simulate(Opts),
    /// Print the resolved configuration as JSON.
    Config(Opts),
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Args, Debug)]
struct Opts {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Core CSV file (repeatable; replaces the config's list).
    #[arg(long = "core", value_name = "PATH")]
    cores: Vec<PathBuf>,
    /// Core id every other core is scaled against.
    #[arg(long)]
    reference: Option<String>,
    /// Covariance structure: m1 (joint), m2 (independent) or m3 (joint, per-core scale).
    #[arg(short, long)]
    model: Option<ModelKind>,
    /// Keep only observations in [T_MIN, T_MAX] (k yr).
    #[arg(long, num_args = 2, value_names = ["T_MIN", "T_MAX"])]
    window: Option<Vec<f64>>,
    #[arg(long)]
    grid_start: Option<f64>,
    #[arg(long)]
    grid_end: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
    /// Add the grid end point when it falls on the lattice.
    #[arg(long)]
    include_end: bool,
    /// Grid spacing in standardized hyperparameter coordinates.
    #[arg(long)]
    delta_z: Option<f64>,
    /// Log-density drop at which the hyperparameter grid stops.
    #[arg(long)]
    delta_pi: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sample paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Event window [START, END] (k yr).
    #[arg(long, num_args = 2, value_names = ["START", "END"])]
    event_window: Option<Vec<f64>>,
    /// Simulation replicates for `calibrate`.
    #[arg(long)]
    replicates: Option<usize>,
    /// Posterior JSON to read (default: <out>/posterior.json).
    #[arg(long)]
    posterior: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "JOINTSERIES_THREADS")]
    threads: Option<usize>,
}

impl Opts {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        if !self.cores.is_empty() {
            cfg.cores = self
                .cores
                .iter()
                .map(|path| CoreSpec {
                    path: path.clone(),
                    core_id: None,
                    section_length_cm: None,
                })
                .collect();
        }
        if let Some(r) = &self.reference {
            cfg.reference_core = Some(r.clone());
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(w) = &self.window {
            cfg.window = Some((w[0], w[1]));
        }
        if self.grid_start.is_some() {
            cfg.grid.start = self.grid_start;
        }
        if self.grid_end.is_some() {
            cfg.grid.end = self.grid_end;
        }
        if let Some(s) = self.grid_step {
            cfg.grid.step = s;
        }
        if self.include_end {
            cfg.grid.include_end = true;
        }
        if let Some(d) = self.delta_z {
            cfg.exploration.delta_z = d;
        }
        if let Some(d) = self.delta_pi {
            cfg.exploration.delta_pi = d;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.paths {
            cfg.paths.count = n;
        }
        if let Some(w) = &self.event_window {
            cfg.paths.event_window = (w[0], w[1]);
        }
        if let Some(r) = self.replicates {
            cfg.simulation.replicates = r;
        }
        if self.posterior.is_some() {
            cfg.posterior = self.posterior.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn fail(err: &Error) -> ExitCode {
    let body = serde_json::json!({ "error": err.code(), "message": err.to_string() });
    eprintln!("{body}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, opts) = match &cli.command {
        Cmd::Variogram(o) => (Some(Command::Variogram), o),
        Cmd::Fit(o) => (Some(Command::Fit), o),
        Cmd::Impute(o) => (Some(Command::Impute), o),
        Cmd::Sample(o) => (Some(Command::Sample), o),
        Cmd::Event(o) => (Some(Command::Event), o),
        Cmd::Compare(o) => (Some(Command::Compare), o),
        Cmd::Calibrate(o) => (Some(Command::Calibrate), o),
        Cmd::Simulate(o) => (Some(Command::Simulate), o),
        Cmd::Config(o) => (None, o),
    };
    if let Some(n) = opts.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", serde_json::json!({ "error": "threads", "message": e.to_string() }));
            return ExitCode::from(1);
        }
    }
    let cfg = match opts.resolve() {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    let Some(command) = command else {
        match serde_json::to_string_pretty(&cfg) {
            Ok(text) => {
                println!("{text}");
                return ExitCode::SUCCESS;
            }
            Err(e) => return fail(&e.into()),
        }
    };
    match pipeline::run(command, &cfg) {
        Ok(report) => {
            print!("{}", report.summary);
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
