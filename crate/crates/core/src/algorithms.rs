//! IMO³ and the Rand-P, Rand-T and Log-TS baselines.
//!
//! Every algorithm runs through [`Elicitor`], a step-at-a-time state
//! machine: `next_query` proposes a value vector, `submit` records the
//! designer's answer and `finish` fits `theta` and picks the final policy.
//! [`run`] drives an elicitor with a [`DesignerChannel`]; the session
//! service drives the same machine from HTTP requests.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::LogDataset;
use crate::design::{g_optimal_design, sample_from_design, DesignWeights};
use crate::elicitation::{
    logistic_mle, sigmoid, DesignerChannel, MleFit, PendingQuery, QueryRecord, DEFAULT_RIDGE,
};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{ClipLevel, EstimatorKind, OffPolicyEstimator};
use crate::optimizer::optimize_scalarized;
use crate::rng::{derive_seed, seeded, standard_normal, uniform_simplex, unit_ball, SimRng};
use crate::types::{utility, Policy, ProblemSpec, Scalarization, ValueVector};

const DEDUP_TOL: f64 = 1e-9;
const PRESELECT_STREAM: u64 = 1;
const QUERY_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Imo3,
    RandP,
    RandT,
    LogTs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Imo3,
        Algorithm::RandP,
        Algorithm::RandT,
        Algorithm::LogTs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Imo3 => "imo3",
            Algorithm::RandP => "rand_p",
            Algorithm::RandT => "rand_t",
            Algorithm::LogTs => "log_ts",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown algorithm `{s}`; expected one of imo3, rand_p, rand_t, log_ts"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub budget_t: usize,
    pub preselect_l: usize,
    pub estimator_kind: EstimatorKind,
    pub clip_m: f64,
    pub seed: u64,
    pub ridge: f64,
    pub design_tolerance: f64,
    pub design_max_iters: usize,
    /// Show `V_hat(pi) - V_hat(pi0)` instead of `V_hat(pi)`.
    pub subtract_baseline: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            budget_t: 100,
            preselect_l: 500,
            estimator_kind: EstimatorKind::Ips,
            clip_m: 10.0,
            seed: 0,
            ridge: DEFAULT_RIDGE,
            design_tolerance: 0.05,
            design_max_iters: 10_000,
            subtract_baseline: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget_t == 0 {
            return Err(Error::invalid("budget_t must be >= 1"));
        }
        if self.preselect_l == 0 {
            return Err(Error::invalid("preselect_l must be >= 1"));
        }
        if !(self.clip_m > 0.0) {
            return Err(Error::invalid("clip_m must be > 0"));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::invalid("ridge must be finite and >= 0"));
        }
        if !(self.design_tolerance.is_finite() && self.design_tolerance >= 0.0) {
            return Err(Error::invalid("design_tolerance must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn clip(&self) -> Result<ClipLevel> {
        ClipLevel::new(self.clip_m)
    }

    /// Estimator for `data` as configured.
    pub fn build_estimator(&self, data: &LogDataset) -> Result<OffPolicyEstimator> {
        OffPolicyEstimator::new(self.estimator_kind, data, self.clip()?, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub policy: Policy,
    pub value: ValueVector,
    /// Scalarization the policy was optimized for, if any.
    pub theta: Option<Scalarization>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub g_value: Option<f64>,
    pub effective_dim: Option<usize>,
    pub design_iterations: Option<usize>,
    pub design_converged: Option<bool>,
    pub design_tolerance: Option<f64>,
    pub mle_iterations: usize,
    pub mle_converged: bool,
    pub all_same_answer: bool,
    pub posterior_trace: Option<f64>,
    /// Minimum of `l'(theta*' v)` over presented queries.
    pub c_min: Option<f64>,
    /// `|V_hat(pi) - V(pi)|_2` for the final policy.
    pub estimator_error: Option<f64>,
    pub theta_error: Option<f64>,
    pub true_value: Option<ValueVector>,
    /// Whether the estimated optimum under `theta*` is among the candidates.
    pub optimum_in_candidates: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub final_policy: Policy,
    /// Estimated value of the final policy.
    pub final_value: ValueVector,
    pub theta_hat: Scalarization,
    pub candidate_set: Vec<Candidate>,
    pub queries: Vec<QueryRecord>,
    pub simple_regret: Option<f64>,
    pub diagnostics: Diagnostics,
    /// Set when the channel failed; the result then uses the answers so far.
    pub error: Option<String>,
}

/// The estimated-value maximizer under `theta` over the estimator's
/// feasible set.
pub fn best_policy(estimator: &OffPolicyEstimator, theta: &Scalarization) -> Result<(Policy, ValueVector)> {
    let pi = optimize_scalarized(&estimator.coefficients(theta)?)?;
    let v = estimator.estimate(&pi)?;
    Ok((pi, v))
}

fn push_distinct(set: &mut Vec<Candidate>, c: Candidate) {
    if !set.iter().any(|s| s.value.max_abs_diff(&c.value) < DEDUP_TOL) {
        set.push(c);
    }
}

/// `L` maximizers for scalarizations drawn uniformly from the unit ball,
/// collapsing duplicate value vectors (first occurrence kept).
pub fn preselect_candidates(
    estimator: &OffPolicyEstimator,
    l: usize,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if l == 0 {
        return Err(Error::invalid("preselect_l must be >= 1"));
    }
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    for _ in 0..l {
        let theta = Scalarization::new(unit_ball(estimator.dim(), &mut rng));
        let (policy, value) = best_policy(estimator, &theta)?;
        push_distinct(
            &mut out,
            Candidate {
                policy,
                value,
                theta: Some(theta),
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Pending {
    round: usize,
    shown: ValueVector,
    policy: Policy,
}

/// One elicitation run, advanced one query at a time.
#[derive(Debug, Clone)]
pub struct Elicitor {
    algorithm: Algorithm,
    config: RunConfig,
    estimator: Arc<OffPolicyEstimator>,
    candidates: Vec<Candidate>,
    design: Option<DesignWeights>,
    rng: SimRng,
    queries: Vec<QueryRecord>,
    presented: Vec<Policy>,
    pending: Option<Pending>,
    baseline: Option<ValueVector>,
}

impl Elicitor {
    pub fn new(
        algorithm: Algorithm,
        estimator: Arc<OffPolicyEstimator>,
        config: RunConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (candidates, design) = if algorithm == Algorithm::Imo3 {
            let c = preselect_candidates(
                &estimator,
                config.preselect_l,
                derive_seed(config.seed, &[PRESELECT_STREAM]),
            )?;
            let values: Vec<&ValueVector> = c.iter().map(|c| &c.value).collect();
            let w = g_optimal_design(&values, config.design_tolerance, config.design_max_iters)?;
            (c, Some(w))
        } else {
            (Vec::new(), None)
        };
        let baseline = config
            .subtract_baseline
            .then(|| estimator.logging_value().clone());
        Ok(Elicitor {
            algorithm,
            rng: seeded(derive_seed(config.seed, &[QUERY_STREAM])),
            config,
            estimator,
            candidates,
            design,
            queries: Vec::new(),
            presented: Vec::new(),
            pending: None,
            baseline,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn estimator(&self) -> &OffPolicyEstimator {
        &self.estimator
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn design(&self) -> Option<&DesignWeights> {
        self.design.as_ref()
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn answered(&self) -> usize {
        self.queries.len()
    }

    pub fn is_done(&self) -> bool {
        self.queries.len() >= self.config.budget_t
    }

    /// The outstanding query, if one has been proposed.
    pub fn pending(&self) -> Option<PendingQuery> {
        self.pending.as_ref().map(|p| PendingQuery {
            round: p.round,
            value_vector: p.shown.clone(),
        })
    }

    /// The outstanding query, proposing a new one if none is pending.
    /// `None` once the budget is spent.
    pub fn next_query(&mut self) -> Result<Option<PendingQuery>> {
        if self.is_done() {
            return Ok(None);
        }
        if self.pending.is_none() {
            let round = self.queries.len() + 1;
            let policy = self.propose()?;
            let mut shown = self.estimator.estimate(&policy)?;
            if let Some(b) = &self.baseline {
                shown = shown.sub(b)?;
            }
            self.pending = Some(Pending {
                round,
                shown,
                policy,
            });
        }
        let p = self.pending.as_ref().expect("pending set above");
        Ok(Some(PendingQuery {
            round: p.round,
            value_vector: p.shown.clone(),
        }))
    }

    /// Records the answer to the pending query.
    pub fn submit(&mut self, answer: bool) -> Result<()> {
        let p = self
            .pending
            .take()
            .ok_or_else(|| Error::invalid("no pending query to answer"))?;
        self.queries.push(QueryRecord {
            value_vector: p.shown,
            answer,
            round: p.round,
        });
        self.presented.push(p.policy);
        Ok(())
    }

    fn propose(&mut self) -> Result<Policy> {
        let est = Arc::clone(&self.estimator);
        match self.algorithm {
            Algorithm::Imo3 => {
                let w = self.design.as_ref().expect("IMO3 has a design");
                let i = sample_from_design(w, &mut self.rng);
                Ok(self.candidates[i].policy.clone())
            }
            Algorithm::RandP => {
                let rows = (0..est.num_contexts())
                    .map(|_| uniform_simplex(est.num_actions(), &mut self.rng))
                    .collect();
                Policy::from_rows(rows)
            }
            Algorithm::RandT => {
                let theta = Scalarization::new(unit_ball(est.dim(), &mut self.rng));
                Ok(best_policy(&est, &theta)?.0)
            }
            Algorithm::LogTs => {
                let theta = self.posterior_sample()?;
                Ok(best_policy(&est, &theta)?.0)
            }
        }
    }

    /// Laplace posterior draw: `N(theta_hat, H^-1)` with `H` the negative
    /// Hessian of the penalized log-likelihood.
    fn posterior_sample(&mut self) -> Result<Scalarization> {
        let d = self.estimator.dim();
        let (mean, h) = if self.queries.is_empty() {
            (vec![0.0; d], DMatrix::identity(d, d) * self.config.ridge)
        } else {
            let fit = logistic_mle(&self.queries, self.config.ridge)?;
            let h = DMatrix::from_fn(d, d, |i, j| fit.hessian[i][j]);
            (fit.theta.0, h)
        };
        let z = DVector::from_iterator(d, (0..d).map(|_| standard_normal(&mut self.rng)));
        match h.cholesky() {
            // L L' = H, so L'^-1 z has covariance H^-1
            Some(c) => {
                let offset = c
                    .l()
                    .transpose()
                    .solve_upper_triangular(&z)
                    .ok_or_else(|| Error::invalid("singular posterior factor"))?;
                Ok(Scalarization::new(
                    mean.iter().zip(offset.iter()).map(|(m, o)| m + o).collect(),
                ))
            }
            None => Ok(Scalarization::new(unit_ball(d, &mut self.rng))),
        }
    }

    /// Fits `theta_hat` on the answers so far and selects the final policy.
    pub fn finish(self) -> Result<RunResult> {
        self.conclude(None, None)
    }

    /// Final policy for a forced `theta_hat`, bypassing the MLE.
    pub fn finish_with_theta(self, theta: Scalarization) -> Result<RunResult> {
        check_dim(self.estimator.dim(), theta.dim())?;
        self.conclude(Some(theta), None)
    }

    fn conclude(self, forced: Option<Scalarization>, error: Option<String>) -> Result<RunResult> {
        let d = self.estimator.dim();
        let mut diagnostics = Diagnostics::default();
        if let Some(w) = &self.design {
            diagnostics.g_value = Some(w.g_value);
            diagnostics.effective_dim = Some(w.effective_dim);
            diagnostics.design_iterations = Some(w.iterations);
            diagnostics.design_converged = Some(w.converged);
            diagnostics.design_tolerance = Some(self.config.design_tolerance);
        }
        let fit: Option<MleFit> = if self.queries.is_empty() {
            None
        } else {
            Some(logistic_mle(&self.queries, self.config.ridge)?)
        };
        if let Some(f) = &fit {
            diagnostics.mle_iterations = f.iterations;
            diagnostics.mle_converged = f.converged;
            diagnostics.all_same_answer = f.all_same_answer;
            if self.algorithm == Algorithm::LogTs {
                diagnostics.posterior_trace = f
                    .covariance()
                    .ok()
                    .map(|c| (0..d).map(|i| c[i][i]).sum());
            }
        }
        let averaged = self.algorithm == Algorithm::LogTs && forced.is_none();
        let theta_hat = match forced {
            Some(t) => t,
            None => fit
                .map(|f| f.theta)
                .unwrap_or_else(|| Scalarization::zeros(d)),
        };

        let final_policy = if averaged {
            if self.presented.is_empty() {
                best_policy(&self.estimator, &theta_hat)?.0
            } else {
                Policy::average(&self.presented)?
            }
        } else {
            best_policy(&self.estimator, &theta_hat)?.0
        };
        let final_value = self.estimator.estimate(&final_policy)?;

        let candidate_set = if self.algorithm == Algorithm::Imo3 {
            self.candidates
        } else {
            let mut set = Vec::new();
            for policy in self.presented {
                let value = self.estimator.estimate(&policy)?;
                push_distinct(
                    &mut set,
                    Candidate {
                        policy,
                        value,
                        theta: None,
                    },
                );
            }
            set
        };

        Ok(RunResult {
            algorithm: self.algorithm,
            final_policy,
            final_value,
            theta_hat,
            candidate_set,
            queries: self.queries,
            simple_regret: None,
            diagnostics,
            error,
        })
    }
}

/// Runs `algorithm` against `channel`. A channel failure ends the run
/// early with [`RunResult::error`] set.
pub fn run_with_estimator<C: DesignerChannel + ?Sized>(
    algorithm: Algorithm,
    estimator: Arc<OffPolicyEstimator>,
    channel: &mut C,
    config: &RunConfig,
) -> Result<RunResult> {
    let mut el = Elicitor::new(algorithm, estimator, config.clone())?;
    while let Some(q) = el.next_query()? {
        match channel.ask(q.round, &q.value_vector) {
            Ok(a) => el.submit(a)?,
            Err(e @ Error::Channel { .. }) => {
                log::warn!("{algorithm}: {e}");
                return el.conclude(None, Some(e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    el.finish()
}

fn check_shape(problem: &ProblemSpec, data: &LogDataset) -> Result<()> {
    check_dim(problem.num_contexts, data.num_contexts())?;
    check_dim(problem.num_actions, data.num_actions())?;
    check_dim(problem.num_objectives, data.dim())
}

pub fn run<C: DesignerChannel + ?Sized>(
    algorithm: Algorithm,
    problem: &ProblemSpec,
    dataset: &LogDataset,
    channel: &mut C,
    config: &RunConfig,
) -> Result<RunResult> {
    check_shape(problem, dataset)?;
    let est = Arc::new(config.build_estimator(dataset)?);
    run_with_estimator(algorithm, est, channel, config)
}

pub fn run_imo3<C: DesignerChannel + ?Sized>(
    problem: &ProblemSpec,
    dataset: &LogDataset,
    channel: &mut C,
    config: &RunConfig,
) -> Result<RunResult> {
    run(Algorithm::Imo3, problem, dataset, channel, config)
}

pub fn run_rand_p<C: DesignerChannel + ?Sized>(
    problem: &ProblemSpec,
    dataset: &LogDataset,
    channel: &mut C,
    config: &RunConfig,
) -> Result<RunResult> {
    run(Algorithm::RandP, problem, dataset, channel, config)
}

pub fn run_rand_t<C: DesignerChannel + ?Sized>(
    problem: &ProblemSpec,
    dataset: &LogDataset,
    channel: &mut C,
    config: &RunConfig,
) -> Result<RunResult> {
    run(Algorithm::RandT, problem, dataset, channel, config)
}

pub fn run_log_ts<C: DesignerChannel + ?Sized>(
    problem: &ProblemSpec,
    dataset: &LogDataset,
    channel: &mut C,
    config: &RunConfig,
) -> Result<RunResult> {
    run(Algorithm::LogTs, problem, dataset, channel, config)
}

/// The true optimum under `theta` over all policies: per context, the
/// action maximizing `theta . C(x,a)` (lowest index on ties).
pub fn true_optimum(problem: &ProblemSpec, theta: &Scalarization) -> Result<(Policy, ValueVector)> {
    check_dim(problem.num_objectives, theta.dim())?;
    let table = problem.value_coefficients()?;
    let actions: Vec<usize> = (0..problem.num_contexts)
        .map(|x| {
            let mut best = (0, f64::NEG_INFINITY);
            for a in 0..problem.num_actions {
                let u = theta.dot_slice(table.get(x, a));
                if u > best.1 {
                    best = (a, u);
                }
            }
            best.0
        })
        .collect();
    let pi = Policy::deterministic(&actions, problem.num_actions)?;
    let v = table.contract(&pi)?;
    Ok((pi, v))
}

/// Fills regret and truth-dependent diagnostics for a simulated run.
pub fn evaluate_run(
    result: &mut RunResult,
    problem: &ProblemSpec,
    estimator: &OffPolicyEstimator,
    theta_star: &Scalarization,
) -> Result<()> {
    let (_, v_opt) = true_optimum(problem, theta_star)?;
    let v_final = problem.true_value(&result.final_policy)?;
    result.simple_regret =
        Some(utility(theta_star, &v_opt)? - utility(theta_star, &v_final)?);
    let diag = &mut result.diagnostics;
    diag.estimator_error = Some(result.final_value.sub(&v_final)?.l2_norm());
    diag.theta_error = Some(
        ValueVector::new(result.theta_hat.0.clone())
            .sub(&ValueVector::new(theta_star.0.clone()))?
            .l2_norm(),
    );
    diag.true_value = Some(v_final);
    let mut c_min: Option<f64> = None;
    for q in &result.queries {
        let p = sigmoid(utility(theta_star, &q.value_vector)?);
        let slope = p * (1.0 - p);
        c_min = Some(c_min.map_or(slope, |c| c.min(slope)));
    }
    diag.c_min = c_min;
    if result.algorithm == Algorithm::Imo3 {
        let (_, v_hat_opt) = best_policy(estimator, theta_star)?;
        let u = utility(theta_star, &v_hat_opt)?;
        let best_candidate = result
            .candidate_set
            .iter()
            .map(|c| utility(theta_star, &c.value))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        diag.optimum_in_candidates = Some(best_candidate >= u - DEDUP_TOL);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicitation::{ScriptedDesigner, SimulatedDesigner};
    use crate::optimizer::brute_force_optimize;
    use crate::problems::{build_pluggable_problem, build_zdt1_problem, Objective, generate_log, make_dirichlet_logging_policy, Zdt1Config};

    fn setup(n: usize, seed: u64) -> (ProblemSpec, LogDataset) {
        let p = build_zdt1_problem(seed, &Zdt1Config::default()).unwrap();
        let pi0 = make_dirichlet_logging_policy(&p, 10.0, seed + 1).unwrap();
        let log = generate_log(&p, &pi0, n, seed + 2).unwrap();
        (p, log)
    }

    fn cfg(t: usize, seed: u64) -> RunConfig {
        RunConfig {
            budget_t: t,
            seed,
            ..RunConfig::default()
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.as_str()));
        }
        assert!("greedy".parse::<Algorithm>().is_err());
    }

    #[test]
    fn budget_is_exact_for_every_algorithm() {
        let (p, log) = setup(2000, 1);
        for a in Algorithm::ALL {
            let mut sim = SimulatedDesigner::new(Scalarization::new(vec![0.6, -0.8]), 5);
            let r = run(a, &p, &log, &mut sim, &cfg(17, 3)).unwrap();
            assert_eq!(r.queries.len(), 17);
            assert!(r.queries.iter().enumerate().all(|(i, q)| q.round == i + 1));
            r.final_policy.validate().unwrap();
        }
        assert!(run(Algorithm::Imo3, &p, &log, &mut ScriptedDesigner::new([]), &cfg(0, 1)).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let (p, log) = setup(2000, 2);
        for a in Algorithm::ALL {
            let go = || {
                let mut sim = SimulatedDesigner::new(Scalarization::new(vec![0.3, 0.5]), 9);
                serde_json::to_string(&run(a, &p, &log, &mut sim, &cfg(25, 4)).unwrap()).unwrap()
            };
            assert_eq!(go(), go());
        }
    }

    #[test]
    fn single_candidate_and_single_query() {
        let (p, log) = setup(1000, 3);
        let c = RunConfig {
            preselect_l: 1,
            ..cfg(4, 1)
        };
        let r = run_imo3(&p, &log, &mut ScriptedDesigner::new([true, false, true, true]), &c).unwrap();
        assert_eq!(r.candidate_set.len(), 1);
        assert!(r.queries.iter().all(|q| q.value_vector == r.queries[0].value_vector));

        let r = run_rand_p(&p, &log, &mut ScriptedDesigner::new([true]), &cfg(1, 1)).unwrap();
        assert_eq!(r.queries.len(), 1);
        assert!(r.theta_hat.as_slice().iter().all(|t| t.is_finite()));
    }

    #[test]
    fn one_objective_gives_at_most_two_candidates() {
        let obj = [Objective::new("f", "", (0.0, 2.0), |z: &[f64]| z[0] + z[1])];
        let contexts = [vec![0.0], vec![0.1]];
        let actions = [vec![0.0], vec![0.1], vec![0.2]];
        let p = build_pluggable_problem("line", &obj, &contexts, &actions, 0.0).unwrap();
        let pi0 = Policy::uniform(2, 3);
        let log = generate_log(&p, &pi0, 600, 4).unwrap();
        let est = RunConfig::default().build_estimator(&log).unwrap();
        let c = preselect_candidates(&est, 200, 8).unwrap();
        assert!(c.len() <= 2);

        let r = run_rand_t(&p, &log, &mut SimulatedDesigner::new(Scalarization::new(vec![1.0]), 2), &cfg(30, 2)).unwrap();
        let mut distinct: Vec<ValueVector> = Vec::new();
        for q in &r.queries {
            if !distinct.iter().any(|d| d.max_abs_diff(&q.value_vector) < 1e-12) {
                distinct.push(q.value_vector.clone());
            }
        }
        assert!(distinct.len() <= 2);
    }

    #[test]
    fn final_policy_dominates_candidates_under_theta_hat() {
        let (p, log) = setup(5000, 5);
        let mut sim = SimulatedDesigner::new(Scalarization::new(vec![-0.2, -0.9]), 1);
        let r = run_imo3(&p, &log, &mut sim, &cfg(50, 6)).unwrap();
        let u = utility(&r.theta_hat, &r.final_value).unwrap();
        for c in &r.candidate_set {
            assert!(u >= utility(&r.theta_hat, &c.value).unwrap() - 1e-9);
        }
    }

    #[test]
    fn oracle_theta_reaches_brute_force_optimum() {
        let cfg_small = Zdt1Config {
            num_contexts: 2,
            num_actions: 3,
            ..Zdt1Config::default()
        };
        let p = build_zdt1_problem(7, &cfg_small).unwrap();
        let pi0 = make_dirichlet_logging_policy(&p, 10.0, 8).unwrap();
        let log = generate_log(&p, &pi0, 3000, 9).unwrap();
        let theta = Scalarization::new(vec![0.5, -0.5]);
        for kind in EstimatorKind::ALL {
            let c = RunConfig {
                estimator_kind: kind,
                clip_m: 1.5,
                ..cfg(5, 1)
            };
            let est = Arc::new(c.build_estimator(&log).unwrap());
            let el = Elicitor::new(Algorithm::Imo3, est.clone(), c).unwrap();
            let r = el.finish_with_theta(theta.clone()).unwrap();
            let (_, v_bf) = brute_force_optimize(2, 3, Some(est.caps()), &theta, |pi| est.estimate(pi)).unwrap();
            let gap = utility(&theta, &v_bf).unwrap() - utility(&theta, &r.final_value).unwrap();
            assert!(gap.abs() < 1e-9, "{kind}: {gap}");
        }
    }

    #[test]
    fn simple_regret_nonnegative() {
        let (p, log) = setup(3000, 8);
        let est = RunConfig::default().build_estimator(&log).unwrap();
        let est = Arc::new(est);
        for a in Algorithm::ALL {
            let theta = Scalarization::new(vec![0.7, 0.1]);
            let mut sim = SimulatedDesigner::new(theta.clone(), 3);
            let mut r = run_with_estimator(a, est.clone(), &mut sim, &cfg(20, 2)).unwrap();
            evaluate_run(&mut r, &p, &est, &theta).unwrap();
            assert!(r.simple_regret.unwrap() >= -1e-9);
            assert!(r.diagnostics.c_min.unwrap() > 0.0);
        }
    }

    #[test]
    fn channel_failure_returns_partial_result() {
        let (p, log) = setup(1000, 9);
        let r = run_imo3(&p, &log, &mut ScriptedDesigner::new([true, false, true]), &cfg(10, 1)).unwrap();
        assert_eq!(r.queries.len(), 3);
        assert!(r.error.is_some());
    }

    #[test]
    fn log_ts_posterior_shrinks_and_averages() {
        let (p, log) = setup(5000, 10);
        let trace = |t| {
            let mut sim = SimulatedDesigner::new(Scalarization::new(vec![0.6, 0.6]), 4);
            let r = run_log_ts(&p, &log, &mut sim, &cfg(t, 4)).unwrap();
            r.final_policy.validate().unwrap();
            r.diagnostics.posterior_trace.unwrap()
        };
        assert!(trace(200) <= trace(20));
    }

    #[test]
    fn rand_t_queries_are_capped_vertices() {
        let (p, log) = setup(2000, 11);
        let est = RunConfig::default().build_estimator(&log).unwrap();
        let mut sim = SimulatedDesigner::new(Scalarization::new(vec![0.1, 0.2]), 4);
        let r = run_rand_t(&p, &log, &mut sim, &cfg(15, 4)).unwrap();
        let caps = est.caps();
        for c in &r.candidate_set {
            for (x, row) in c.policy.rows().enumerate() {
                // at most one fractional entry per row in a vertex
                let fractional = row
                    .iter()
                    .enumerate()
                    .filter(|(a, v)| **v > 1e-12 && (**v - caps[x * p.num_actions + a].min(1.0)).abs() > 1e-12)
                    .count();
                assert!(fractional <= 1);
                for (a, v) in row.iter().enumerate() {
                    assert!(*v <= caps[x * p.num_actions + a] + 1e-12);
                }
            }
        }
    }
}
