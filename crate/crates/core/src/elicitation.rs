//! Designer query model, answer channels and the logistic MLE of `theta`.

use std::collections::VecDeque;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{seeded, SimRng};
use crate::types::{Scalarization, ValueVector};

pub const DEFAULT_RIDGE: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Probability that the designer answers "acceptable" for `v`.
pub fn response_probability(theta: &Scalarization, v: &ValueVector) -> Result<f64> {
    check_dim(theta.dim(), v.dim())?;
    Ok(sigmoid(theta.dot_slice(v.as_slice())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub value_vector: ValueVector,
    pub answer: bool,
    /// 1-based.
    pub round: usize,
}

/// Source of binary acceptability answers.
pub trait DesignerChannel {
    fn ask(&mut self, round: usize, v: &ValueVector) -> Result<bool>;
}

impl<C: DesignerChannel + ?Sized> DesignerChannel for &mut C {
    fn ask(&mut self, round: usize, v: &ValueVector) -> Result<bool> {
        (**self).ask(round, v)
    }
}

/// Bernoulli answers under a known `theta`.
#[derive(Debug, Clone)]
pub struct SimulatedDesigner {
    theta: Scalarization,
    rng: SimRng,
}

impl SimulatedDesigner {
    pub fn new(theta: Scalarization, seed: u64) -> Self {
        SimulatedDesigner {
            theta,
            rng: seeded(seed),
        }
    }

    pub fn theta(&self) -> &Scalarization {
        &self.theta
    }
}

impl DesignerChannel for SimulatedDesigner {
    fn ask(&mut self, _round: usize, v: &ValueVector) -> Result<bool> {
        let p = response_probability(&self.theta, v)?;
        Ok(self.rng.random::<f64>() < p)
    }
}

/// Replays a fixed answer sequence; fails once it runs out.
#[derive(Debug, Clone)]
pub struct ScriptedDesigner {
    answers: VecDeque<bool>,
    given: usize,
}

impl ScriptedDesigner {
    pub fn new(answers: impl IntoIterator<Item = bool>) -> Self {
        ScriptedDesigner {
            answers: answers.into_iter().collect(),
            given: 0,
        }
    }
}

impl DesignerChannel for ScriptedDesigner {
    fn ask(&mut self, _round: usize, _v: &ValueVector) -> Result<bool> {
        match self.answers.pop_front() {
            Some(a) => {
                self.given += 1;
                Ok(a)
            }
            None => Err(Error::Channel {
                message: "scripted answers exhausted".into(),
                rounds_completed: self.given,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingQuery {
    pub round: usize,
    pub value_vector: ValueVector,
}

/// Blocking channel answered from another thread through a [`LiveHandle`].
#[derive(Debug)]
pub struct LiveChannel {
    queries: Sender<PendingQuery>,
    answers: Receiver<bool>,
    timeout: Duration,
    completed: usize,
}

#[derive(Debug)]
pub struct LiveHandle {
    queries: Receiver<PendingQuery>,
    answers: Sender<bool>,
}

pub fn live_channel(timeout: Duration) -> (LiveChannel, LiveHandle) {
    let (qtx, qrx) = mpsc::channel();
    let (atx, arx) = mpsc::channel();
    (
        LiveChannel {
            queries: qtx,
            answers: arx,
            timeout,
            completed: 0,
        },
        LiveHandle {
            queries: qrx,
            answers: atx,
        },
    )
}

impl DesignerChannel for LiveChannel {
    fn ask(&mut self, round: usize, v: &ValueVector) -> Result<bool> {
        let abandoned = |message: &str, completed| Error::Channel {
            message: message.into(),
            rounds_completed: completed,
        };
        self.queries
            .send(PendingQuery {
                round,
                value_vector: v.clone(),
            })
            .map_err(|_| abandoned("designer disconnected", self.completed))?;
        match self.answers.recv_timeout(self.timeout) {
            Ok(a) => {
                self.completed += 1;
                Ok(a)
            }
            Err(RecvTimeoutError::Timeout) => Err(abandoned("session expired", self.completed)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(abandoned("designer disconnected", self.completed))
            }
        }
    }
}

impl LiveHandle {
    /// Waits for the next query from the running algorithm.
    pub fn next_query(&self, timeout: Duration) -> Option<PendingQuery> {
        self.queries.recv_timeout(timeout).ok()
    }

    pub fn answer(&self, answer: bool) -> Result<()> {
        self.answers.send(answer).map_err(|_| Error::Channel {
            message: "run no longer listening".into(),
            rounds_completed: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub theta: Scalarization,
    pub iterations: usize,
    /// Infinity norm of the penalized gradient at `theta`.
    pub grad_norm: f64,
    pub converged: bool,
    /// Negative Hessian of the penalized log-likelihood at `theta`.
    pub hessian: Vec<Vec<f64>>,
    /// Every answer identical: the unpenalized MLE does not exist.
    pub all_same_answer: bool,
}

impl MleFit {
    /// Inverse of [`MleFit::hessian`], the Laplace covariance.
    pub fn covariance(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.hessian.len();
        let h = DMatrix::from_fn(d, d, |i, j| self.hessian[i][j]);
        let inv = h
            .try_inverse()
            .ok_or_else(|| Error::invalid("Hessian is singular"))?;
        Ok((0..d).map(|i| inv.row(i).iter().cloned().collect()).collect())
    }
}

fn check_queries(queries: &[QueryRecord]) -> Result<usize> {
    let first = queries
        .first()
        .ok_or_else(|| Error::invalid("MLE needs at least one query"))?;
    let d = first.value_vector.dim();
    for q in queries {
        check_dim(d, q.value_vector.dim())?;
        if q.value_vector.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("query value vector".into()));
        }
    }
    Ok(d)
}

/// `sum_t [y log l(z) + (1-y) log(1-l(z))] - ridge/2 |theta|^2`.
pub fn penalized_log_likelihood(queries: &[QueryRecord], theta: &[f64], ridge: f64) -> f64 {
    let mut ll = 0.0;
    for q in queries {
        let z: f64 = q.value_vector.as_slice().iter().zip(theta).map(|(v, t)| v * t).sum();
        ll -= if q.answer { softplus(-z) } else { softplus(z) };
    }
    ll - 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
}

pub fn penalized_gradient(queries: &[QueryRecord], theta: &[f64], ridge: f64) -> Vec<f64> {
    let mut g: Vec<f64> = theta.iter().map(|t| -ridge * t).collect();
    for q in queries {
        let v = q.value_vector.as_slice();
        let z: f64 = v.iter().zip(theta).map(|(v, t)| v * t).sum();
        let resid = if q.answer { 1.0 } else { 0.0 } - sigmoid(z);
        for (gi, vi) in g.iter_mut().zip(v) {
            *gi += resid * vi;
        }
    }
    g
}

fn neg_hessian(queries: &[QueryRecord], theta: &[f64], ridge: f64) -> DMatrix<f64> {
    let d = theta.len();
    let mut h = DMatrix::<f64>::identity(d, d) * ridge;
    for q in queries {
        let v = DVector::from_column_slice(q.value_vector.as_slice());
        let p = sigmoid(v.as_slice().iter().zip(theta).map(|(v, t)| v * t).sum());
        h += p * (1.0 - p) * &v * v.transpose();
    }
    h
}

/// Ridge-penalized logistic maximum likelihood by damped Newton.
pub fn logistic_mle(queries: &[QueryRecord], ridge: f64) -> Result<MleFit> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::invalid("ridge must be finite and >= 0"));
    }
    let d = check_queries(queries)?;
    let all_same_answer = queries.iter().all(|q| q.answer == queries[0].answer);

    let mut theta = vec![0.0; d];
    let mut obj = penalized_log_likelihood(queries, &theta, ridge);
    let mut grad = penalized_gradient(queries, &theta, ridge);
    let mut iterations = 0;
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    while inf_norm(&grad) > GRAD_TOL && iterations < MAX_NEWTON {
        let h = neg_hessian(queries, &theta, ridge);
        let g = DVector::from_column_slice(&grad);
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => h
                .svd(true, true)
                .solve(&g, 1e-12)
                .map_err(|e| Error::invalid(format!("Newton step failed: {e}")))?,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let cand_obj = penalized_log_likelihood(queries, &cand, ridge);
            if cand_obj >= obj {
                theta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        grad = penalized_gradient(queries, &theta, ridge);
    }

    let grad_norm = inf_norm(&grad);
    let h = neg_hessian(queries, &theta, ridge);
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("MLE diverged".into()));
    }
    Ok(MleFit {
        theta: Scalarization::new(theta),
        iterations,
        grad_norm,
        converged: grad_norm <= GRAD_TOL,
        hessian: (0..d).map(|i| h.row(i).iter().cloned().collect()).collect(),
        all_same_answer,
    })
}
