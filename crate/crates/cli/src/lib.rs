//! Argument parsing and command bodies for the `imo3` binary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use imo3::algorithms::Algorithm;
use imo3::estimators::EstimatorKind;
use imo3::harness::{emit_plot_data, read_results_csv, run_sweep_to_path, SweepProblem, SweepSpec, METRICS};
use imo3::problems::{generate_log, make_dirichlet_logging_policy};
use imo3_service::{Catalog, SessionStore, SystemClock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] imo3::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(name = "imo3", version, about = "Interactive multi-objective off-policy optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment grid and write a results CSV plus `<out>.meta.json`.
    Sweep(SweepArgs),
    /// Aggregate a results CSV into plot-ready JSON.
    PlotData(PlotDataArgs),
    /// Serve live elicitation sessions over HTTP.
    Serve(ServeArgs),
    /// Write a logged dataset as NDJSON.
    GenerateLog(GenerateLogArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Zdt1,
    Stock,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    #[arg(long, value_enum, default_value = "zdt1")]
    pub problem: ProblemKind,
    /// Daily closing prices (`date,ticker,close`), required for `stock`.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub contexts: usize,
    #[arg(long, default_value_t = 10)]
    pub actions: usize,
    /// Reward noise standard deviation on the raw ZDT1 scale.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
}

impl ProblemArgs {
    pub fn to_sweep_problem(&self) -> Result<SweepProblem, CliError> {
        match self.problem {
            ProblemKind::Zdt1 => Ok(SweepProblem::Zdt1 {
                num_contexts: self.contexts,
                num_actions: self.actions,
                noise_sd: self.noise,
            }),
            ProblemKind::Stock => {
                let path = self
                    .prices
                    .clone()
                    .ok_or_else(|| CliError::Usage("--problem stock needs --prices <csv>".into()))?;
                Ok(SweepProblem::Stock { path })
            }
        }
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: imo3::Error| e.to_string())
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: imo3::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Query budgets.
    #[arg(long = "T", value_delimiter = ',', default_value = "10,50,100,200")]
    pub t_values: Vec<usize>,
    /// Logged dataset sizes.
    #[arg(long = "N", value_delimiter = ',', default_value = "20000")]
    pub n_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm, default_value = "imo3,rand_p,rand_t,log_ts")]
    pub algos: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',', value_parser = parse_estimator, default_value = "ips")]
    pub estimator: Vec<EstimatorKind>,
    /// IPS clipping level.
    #[arg(long = "M", default_value_t = 10.0)]
    pub clip_m: f64,
    /// Number of preselected candidate policies.
    #[arg(long = "L", default_value_t = 500)]
    pub preselect_l: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub datasets: usize,
    #[arg(long, default_value_t = 10)]
    pub thetas: usize,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Dirichlet concentration of the logging policy.
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub design_tolerance: f64,
    /// Worker threads; defaults to `IMO3_THREADS`, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

impl SweepArgs {
    pub fn to_spec(&self) -> Result<SweepSpec, CliError> {
        let spec = SweepSpec {
            problem: self.problem.to_sweep_problem()?,
            t_values: self.t_values.clone(),
            n_values: self.n_values.clone(),
            algorithms: self.algos.clone(),
            estimators: self.estimator.clone(),
            num_log_datasets: self.datasets,
            num_theta_stars: self.thetas,
            runs_per_combo: self.runs,
            clip_m: self.clip_m,
            preselect_l: self.preselect_l,
            design_tolerance: self.design_tolerance,
            logging_alpha: self.alpha,
            master_seed: self.seed,
            threads: self.threads,
            ..SweepSpec::default()
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct PlotDataArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "simple_regret")]
    pub metric: String,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value = "./sessions")]
    pub data_dir: PathBuf,
    /// Also offer the stock problem built from this price file.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// Records in each problem's logged dataset.
    #[arg(long, default_value_t = 20_000)]
    pub log_size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Hours of inactivity before an unfinished session expires.
    #[arg(long, default_value_t = 24.0)]
    pub expiry_hours: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateLogArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long = "N", default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let spec = args.to_spec()?;
    let started = Instant::now();
    log::info!("running {} result rows", spec.expected_rows());
    let out = run_sweep_to_path(&spec, &args.out).map_err(|e| match e {
        imo3::Error::Io(io) => CliError::Usage(format!("{}: {io}", args.out.display())),
        e => e.into(),
    })?;
    eprintln!(
        "wrote {} rows ({} runs) to {} in {:.1}s",
        out.rows.len(),
        out.meta.detail_rows,
        args.out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn plot_data(args: &PlotDataArgs) -> Result<(), CliError> {
    if !METRICS.contains(&args.metric.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown metric `{}`; expected one of {}",
            args.metric,
            METRICS.join(", ")
        )));
    }
    let rows = read_results_csv(BufReader::new(File::open(&args.input)?))?;
    let plot = emit_plot_data(&rows, &args.metric)?;
    match &args.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(&mut w, &plot)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, &plot)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn generate_log_file(args: &GenerateLogArgs) -> Result<(), CliError> {
    let problem = args.problem.to_sweep_problem()?.build(args.seed)?;
    let pi0 = make_dirichlet_logging_policy(&problem, args.alpha, imo3::rng::derive_seed(args.seed, &[1]))?;
    let log = generate_log(&problem, &pi0, args.n, imo3::rng::derive_seed(args.seed, &[2]))?;
    log.write_ndjson(BufWriter::new(File::create(&args.out)?))?;
    eprintln!("wrote {} records to {}", log.len(), args.out.display());
    Ok(())
}

pub fn build_store(args: &ServeArgs) -> Result<SessionStore, CliError> {
    if !(args.expiry_hours.is_finite() && args.expiry_hours > 0.0) {
        return Err(CliError::Usage("--expiry-hours must be positive".into()));
    }
    let catalog = Catalog::standard(args.seed, args.log_size, args.prices.as_deref())?;
    let expiry = Duration::from_secs_f64(args.expiry_hours * 3600.0);
    Ok(SessionStore::open(catalog, &args.data_dir, Arc::new(SystemClock), expiry)?)
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let store = Arc::new(build_store(args)?);
    eprintln!(
        "{} problems, {} resumed sessions; listening on http://{}:{}",
        store.catalog().len(),
        store.len(),
        args.host,
        args.port
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(imo3_service::serve(SocketAddr::new(args.host, args.port), store))?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sweep(a) => sweep(a),
        Command::PlotData(a) => plot_data(a),
        Command::Serve(a) => serve(a),
        Command::GenerateLog(a) => generate_log_file(a),
    }
}
