//! Experiment sweeps over budgets, log sizes, estimators and algorithms.
//!
//! Every run is keyed by `(algorithm, estimator, T, N, dataset, theta, run)`
//! and seeded from the master seed alone, so a single row can be
//! re-executed in isolation and the output does not depend on the number
//! of worker threads.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{evaluate_run, run_with_estimator, Algorithm, RunConfig};
use crate::dataset::LogDataset;
use crate::elicitation::{SimulatedDesigner, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, OffPolicyEstimator};
use crate::problems::{
    build_stock_problem, build_zdt1_problem, generate_log, make_dirichlet_logging_policy,
    Zdt1Config,
};
use crate::rng::{derive_seed, seeded, unit_ball};
use crate::types::{ObjectiveScale, ProblemSpec, Scalarization};

const PROBLEM_STREAM: u64 = 10;
const LOGGING_STREAM: u64 = 11;
const LOG_STREAM: u64 = 12;
const THETA_STREAM: u64 = 13;
const RUN_STREAM: u64 = 14;
const DESIGNER_STREAM: u64 = 15;

pub const METRICS: [&str; 3] = ["simple_regret", "theta_error", "value_error"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepProblem {
    Zdt1 {
        num_contexts: usize,
        num_actions: usize,
        noise_sd: f64,
    },
    Stock { path: PathBuf },
}

impl Default for SweepProblem {
    fn default() -> Self {
        let c = Zdt1Config::default();
        SweepProblem::Zdt1 {
            num_contexts: c.num_contexts,
            num_actions: c.num_actions,
            noise_sd: c.noise_sd,
        }
    }
}

impl SweepProblem {
    pub fn id(&self) -> &'static str {
        match self {
            SweepProblem::Zdt1 { .. } => "zdt1",
            SweepProblem::Stock { .. } => "stock",
        }
    }

    pub fn build(&self, seed: u64) -> Result<ProblemSpec> {
        match self {
            SweepProblem::Zdt1 {
                num_contexts,
                num_actions,
                noise_sd,
            } => build_zdt1_problem(
                seed,
                &Zdt1Config {
                    num_contexts: *num_contexts,
                    num_actions: *num_actions,
                    noise_sd: *noise_sd,
                },
            ),
            SweepProblem::Stock { path } => build_stock_problem(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub problem: SweepProblem,
    pub t_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub estimators: Vec<EstimatorKind>,
    pub num_log_datasets: usize,
    pub num_theta_stars: usize,
    pub runs_per_combo: usize,
    pub clip_m: f64,
    pub preselect_l: usize,
    pub ridge: f64,
    pub design_tolerance: f64,
    pub logging_alpha: f64,
    pub master_seed: u64,
    /// Worker threads; `None` reads `IMO3_THREADS`, then uses all cores.
    pub threads: Option<usize>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            problem: SweepProblem::default(),
            t_values: vec![10, 50, 100, 200],
            n_values: vec![20_000],
            algorithms: Algorithm::ALL.to_vec(),
            estimators: vec![EstimatorKind::Ips],
            num_log_datasets: 10,
            num_theta_stars: 10,
            runs_per_combo: 5,
            clip_m: 10.0,
            preselect_l: 500,
            ridge: DEFAULT_RIDGE,
            design_tolerance: 0.05,
            logging_alpha: 10.0,
            master_seed: 7,
            threads: None,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let nonempty = [
            ("t_values", self.t_values.is_empty()),
            ("n_values", self.n_values.is_empty()),
            ("algorithms", self.algorithms.is_empty()),
            ("estimators", self.estimators.is_empty()),
        ];
        for (name, empty) in nonempty {
            if empty {
                return Err(Error::invalid(format!("{name} must be nonempty")));
            }
        }
        let positive = [
            ("num_log_datasets", self.num_log_datasets),
            ("num_theta_stars", self.num_theta_stars),
            ("runs_per_combo", self.runs_per_combo),
            ("preselect_l", self.preselect_l),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if self.t_values.contains(&0) || self.n_values.contains(&0) {
            return Err(Error::invalid("T and N grid values must be >= 1"));
        }
        if !(self.logging_alpha.is_finite() && self.logging_alpha > 0.0) {
            return Err(Error::invalid("logging_alpha must be > 0"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be >= 1"));
        }
        self.run_config(1, EstimatorKind::Ips, 0).validate()
    }

    fn run_config(&self, t: usize, kind: EstimatorKind, seed: u64) -> RunConfig {
        RunConfig {
            budget_t: t,
            preselect_l: self.preselect_l,
            estimator_kind: kind,
            clip_m: self.clip_m,
            seed,
            ridge: self.ridge,
            design_tolerance: self.design_tolerance,
            ..RunConfig::default()
        }
    }

    pub fn expected_rows(&self) -> usize {
        self.t_values.len()
            * self.n_values.len()
            * self.estimators.len()
            * self.algorithms.len()
            * self.num_log_datasets
            * self.num_theta_stars
            * self.runs_per_combo
    }

    fn thread_count(&self) -> Option<usize> {
        self.threads.or_else(|| {
            std::env::var("IMO3_THREADS")
                .ok()
                .and_then(|v| v.trim().parse().ok())
                .filter(|n: &usize| *n > 0)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Run,
    Aggregate,
}

/// One line of the results CSV. Aggregate rows leave the per-run key
/// columns empty and carry standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kind: RowKind,
    pub algorithm: Algorithm,
    pub estimator: EstimatorKind,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub dataset: Option<usize>,
    pub theta: Option<usize>,
    pub run: Option<usize>,
    pub seed: Option<u64>,
    pub simple_regret: f64,
    pub simple_regret_se: Option<f64>,
    pub theta_error: f64,
    pub theta_error_se: Option<f64>,
    pub value_error: f64,
    pub value_error_se: Option<f64>,
    pub g_value: Option<f64>,
    pub num_candidates: Option<usize>,
    pub count: usize,
}

impl ResultRow {
    pub fn metric(&self, name: &str) -> Result<f64> {
        match name {
            "simple_regret" => Ok(self.simple_regret),
            "theta_error" => Ok(self.theta_error),
            "value_error" => Ok(self.value_error),
            _ => Err(unknown_metric(name)),
        }
    }

    fn group_key(&self) -> (Algorithm, EstimatorKind, usize, usize) {
        (self.algorithm, self.estimator, self.t, self.n)
    }
}

fn unknown_metric(name: &str) -> Error {
    Error::UnknownMetric {
        metric: name.to_string(),
        known: METRICS.join(", "),
    }
}

/// Sample mean and `sd / sqrt(n)`; the standard error is 0 for one value.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean/SE rows per `(algorithm, estimator, T, N)`, in key order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut groups: BTreeMap<_, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.kind == RowKind::Run) {
        groups.entry(r.group_key()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((algorithm, estimator, t, n), g)| {
            let col = |f: fn(&ResultRow) -> f64| mean_se(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (sr, sr_se) = col(|r| r.simple_regret);
            let (te, te_se) = col(|r| r.theta_error);
            let (ve, ve_se) = col(|r| r.value_error);
            let gs: Vec<f64> = g.iter().filter_map(|r| r.g_value).collect();
            ResultRow {
                kind: RowKind::Aggregate,
                algorithm,
                estimator,
                t,
                n,
                dataset: None,
                theta: None,
                run: None,
                seed: None,
                simple_regret: sr,
                simple_regret_se: Some(sr_se),
                theta_error: te,
                theta_error_se: Some(te_se),
                value_error: ve,
                value_error_se: Some(ve_se),
                g_value: (!gs.is_empty()).then(|| mean_se(&gs).0),
                num_candidates: None,
                count: g.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub spec: SweepSpec,
    pub problem_id: String,
    pub crate_version: String,
    pub scales: Vec<ObjectiveScale>,
    pub unobserved_cell_fallback: String,
    pub dr_clipped: bool,
    pub detail_rows: usize,
    pub aggregate_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// Detail rows followed by aggregate rows.
    pub rows: Vec<ResultRow>,
    pub meta: SweepMeta,
}

impl SweepOutput {
    pub fn details(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Run)
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Aggregate)
    }

    /// The aggregate row for one grid point.
    pub fn aggregate_for(
        &self,
        algorithm: Algorithm,
        estimator: EstimatorKind,
        t: usize,
        n: usize,
    ) -> Option<&ResultRow> {
        self.aggregates()
            .find(|r| r.group_key() == (algorithm, estimator, t, n))
    }
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

struct Shared {
    n: usize,
    dataset: usize,
    kind: EstimatorKind,
    estimator: Arc<OffPolicyEstimator>,
}

/// Runs the full grid in memory.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = spec.thread_count() {
            b = b.num_threads(t);
        }
        b.build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
    };
    pool.install(|| sweep_inner(spec))
}

fn sweep_inner(spec: &SweepSpec) -> Result<SweepOutput> {
    let seed = spec.master_seed;
    let problem = spec.problem.build(derive_seed(seed, &[PROBLEM_STREAM]))?;
    if !problem.has_ground_truth() {
        return Err(Error::NoGroundTruth);
    }
    let d = problem.num_objectives;

    let logging: Vec<_> = (0..spec.num_log_datasets)
        .map(|i| {
            make_dirichlet_logging_policy(
                &problem,
                spec.logging_alpha,
                derive_seed(seed, &[LOGGING_STREAM, i as u64]),
            )
        })
        .collect::<Result<_>>()?;

    let log_keys: Vec<(usize, usize)> = spec
        .n_values
        .iter()
        .flat_map(|&n| (0..spec.num_log_datasets).map(move |i| (n, i)))
        .collect();
    let logs: Vec<(usize, usize, LogDataset)> = log_keys
        .par_iter()
        .map(|&(n, i)| {
            let s = derive_seed(seed, &[LOG_STREAM, n as u64, i as u64]);
            generate_log(&problem, &logging[i], n, s).map(|l| (n, i, l))
        })
        .collect::<Result<_>>()?;

    let est_keys: Vec<(usize, EstimatorKind)> = (0..logs.len())
        .flat_map(|li| spec.estimators.iter().map(move |&k| (li, k)))
        .collect();
    let shared: Vec<Shared> = est_keys
        .par_iter()
        .map(|&(li, kind)| {
            let (n, dataset, log) = &logs[li];
            let est = spec.run_config(1, kind, 0).build_estimator(log)?;
            Ok(Shared {
                n: *n,
                dataset: *dataset,
                kind,
                estimator: Arc::new(est),
            })
        })
        .collect::<Result<_>>()?;
    drop(logs);

    let thetas: Vec<Scalarization> = (0..spec.num_theta_stars)
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, &[THETA_STREAM, i as u64]));
            Scalarization::new(unit_ball(d, &mut rng))
        })
        .collect();

    let mut jobs = Vec::with_capacity(spec.expected_rows());
    for (si, _) in shared.iter().enumerate() {
        for th in 0..spec.num_theta_stars {
            for run in 0..spec.runs_per_combo {
                for &algo in &spec.algorithms {
                    for &t in &spec.t_values {
                        jobs.push((si, th, run, algo, t));
                    }
                }
            }
        }
    }

    let mut rows: Vec<ResultRow> = jobs
        .par_iter()
        .map(|&(si, th, run, algorithm, t)| {
            let sh = &shared[si];
            let run_seed =
                derive_seed(seed, &[RUN_STREAM, sh.dataset as u64, th as u64, run as u64]);
            let theta_star = &thetas[th];
            let mut designer = SimulatedDesigner::new(
                theta_star.clone(),
                derive_seed(run_seed, &[DESIGNER_STREAM]),
            );
            let cfg = spec.run_config(t, sh.kind, run_seed);
            let mut result =
                run_with_estimator(algorithm, sh.estimator.clone(), &mut designer, &cfg)?;
            evaluate_run(&mut result, &problem, &sh.estimator, theta_star)?;
            let diag = &result.diagnostics;
            Ok(ResultRow {
                kind: RowKind::Run,
                algorithm,
                estimator: sh.kind,
                t,
                n: sh.n,
                dataset: Some(sh.dataset),
                theta: Some(th),
                run: Some(run),
                seed: Some(run_seed),
                simple_regret: result.simple_regret.expect("evaluated"),
                simple_regret_se: None,
                theta_error: diag.theta_error.expect("evaluated"),
                theta_error_se: None,
                value_error: diag.estimator_error.expect("evaluated"),
                value_error_se: None,
                g_value: diag.g_value,
                num_candidates: Some(result.candidate_set.len()),
                count: 1,
            })
        })
        .collect::<Result<_>>()?;

    rows.sort_by(|a, b| {
        (a.algorithm, a.estimator, a.t, a.n, a.dataset, a.theta, a.run)
            .cmp(&(b.algorithm, b.estimator, b.t, b.n, b.dataset, b.theta, b.run))
    });
    let aggregates = aggregate(&rows);
    let meta = SweepMeta {
        spec: spec.clone(),
        problem_id: problem.id.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        scales: problem.scales.clone(),
        unobserved_cell_fallback: "global_mean".into(),
        dr_clipped: false,
        detail_rows: rows.len(),
        aggregate_rows: aggregates.len(),
    };
    rows.extend(aggregates);
    Ok(SweepOutput { rows, meta })
}

/// Runs the sweep and writes `out` plus its `.meta.json` sidecar. Both
/// files are opened before any computation starts.
pub fn run_sweep_to_path(spec: &SweepSpec, out: &Path) -> Result<SweepOutput> {
    spec.validate()?;
    let csv_file = File::create(out)?;
    let meta_file = File::create(meta_path(out))?;
    let output = run_sweep(spec)?;
    write_results_csv(&output.rows, BufWriter::new(csv_file))?;
    let mut w = BufWriter::new(meta_file);
    serde_json::to_writer_pretty(&mut w, &output.meta)
        .map_err(|e| Error::invalid(format!("metadata: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(output)
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::Deserialize { err, .. } => Error::Csv {
            row,
            column: err
                .field()
                .map(|f| f.to_string())
                .unwrap_or_else(|| "?".into()),
            message: err.kind().to_string(),
        },
        other => Error::Csv {
            row,
            column: "?".into(),
            message: format!("{other:?}"),
        },
    }
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: ResultRow = rec.map_err(csv_error)?;
        for (name, v) in [
            ("simple_regret", row.simple_regret),
            ("theta_error", row.theta_error),
            ("value_error", row.value_error),
        ] {
            if v.is_nan() {
                return Err(Error::Csv {
                    row: rows.len() + 2,
                    column: name.into(),
                    message: "NaN".into(),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: usize,
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub algorithm: Algorithm,
    pub estimator: EstimatorKind,
    /// Value of the grid axis held fixed (N when x is T, and vice versa).
    pub fixed: usize,
    pub points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub metric: String,
    /// `"T"` or `"N"`.
    pub x_axis: String,
    pub series: Vec<PlotSeries>,
}

/// Per-series `(grid value, mean, standard error)` recomputed from the
/// detail rows. The x axis is T unless only N varies.
pub fn emit_plot_data(rows: &[ResultRow], metric: &str) -> Result<PlotData> {
    if !METRICS.contains(&metric) {
        return Err(unknown_metric(metric));
    }
    let details: Vec<&ResultRow> = rows.iter().filter(|r| r.kind == RowKind::Run).collect();
    if details.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let distinct = |f: fn(&ResultRow) -> usize| {
        let mut v: Vec<usize> = details.iter().map(|r| f(r)).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let x_is_t = !(distinct(|r| r.t) == 1 && distinct(|r| r.n) > 1);

    let mut groups: BTreeMap<(Algorithm, EstimatorKind, usize), BTreeMap<usize, Vec<f64>>> =
        BTreeMap::new();
    for r in details {
        let (x, fixed) = if x_is_t { (r.t, r.n) } else { (r.n, r.t) };
        groups
            .entry((r.algorithm, r.estimator, fixed))
            .or_default()
            .entry(x)
            .or_default()
            .push(r.metric(metric)?);
    }
    let series = groups
        .into_iter()
        .map(|((algorithm, estimator, fixed), pts)| PlotSeries {
            algorithm,
            estimator,
            fixed,
            points: pts
                .into_iter()
                .map(|(x, vals)| {
                    let (mean, se) = mean_se(&vals);
                    PlotPoint {
                        x,
                        mean,
                        se,
                        n: vals.len(),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(PlotData {
        metric: metric.to_string(),
        x_axis: if x_is_t { "T" } else { "N" }.into(),
        series,
    })
}
