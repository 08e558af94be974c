//! Domain types shared across the pipeline: policies, value vectors,
//! scalarizations and problem instances, plus utility and simple-regret
//! arithmetic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LogDataset;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng::{sample_categorical, standard_normal};

const SIMPLEX_TOL: f64 = 1e-9;

/// Expected per-round reward of a policy, one entry per objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueVector(pub Vec<f64>);

impl ValueVector {
    pub fn new(values: Vec<f64>) -> Self {
        ValueVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ValueVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sub(&self, other: &ValueVector) -> Result<ValueVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(ValueVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ValueVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl AsRef<[f64]> for ValueVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ValueVector {
    fn from(v: Vec<f64>) -> Self {
        ValueVector(v)
    }
}

/// Linear trade-off weights `theta`; utility of a value vector is `theta . v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scalarization(pub Vec<f64>);

impl Scalarization {
    pub fn new(theta: Vec<f64>) -> Self {
        Scalarization(theta)
    }

    pub fn zeros(dim: usize) -> Self {
        Scalarization(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Scalarization {
        Scalarization(self.0.iter().map(|v| v * c).collect())
    }

    /// `theta . r` for a raw reward slice; callers guarantee equal lengths.
    pub(crate) fn dot_slice(&self, r: &[f64]) -> f64 {
        self.0.iter().zip(r).map(|(t, v)| t * v).sum()
    }
}

impl From<Vec<f64>> for Scalarization {
    fn from(v: Vec<f64>) -> Self {
        Scalarization(v)
    }
}

/// `u_theta(v) = theta . v`.
pub fn utility(theta: &Scalarization, v: &ValueVector) -> Result<f64> {
    check_dim(theta.dim(), v.dim())?;
    Ok(theta.dot_slice(&v.0))
}

/// Utility gap between the optimal value `v_opt` and the chosen value under `theta_star`.
pub fn simple_regret(
    theta_star: &Scalarization,
    v_opt: &ValueVector,
    v_chosen: &ValueVector,
) -> Result<f64> {
    check_dim(v_opt.dim(), v_chosen.dim())?;
    Ok(utility(theta_star, v_opt)? - utility(theta_star, v_chosen)?)
}

/// Tabular stochastic policy: row `x` is the action distribution in context `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    num_contexts: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    /// Builds a policy from rows, checking every row lies on the simplex.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_contexts = rows.len();
        if num_contexts == 0 {
            return Err(Error::invalid("policy needs at least one context"));
        }
        let num_actions = rows[0].len();
        if num_actions == 0 {
            return Err(Error::invalid("policy needs at least one action"));
        }
        let mut probs = Vec::with_capacity(num_contexts * num_actions);
        for row in &rows {
            check_dim(num_actions, row.len())?;
            probs.extend_from_slice(row);
        }
        let policy = Policy {
            num_contexts,
            num_actions,
            probs,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub(crate) fn from_flat_unchecked(
        num_contexts: usize,
        num_actions: usize,
        probs: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(probs.len(), num_contexts * num_actions);
        Policy {
            num_contexts,
            num_actions,
            probs,
        }
    }

    pub fn uniform(num_contexts: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Policy::from_flat_unchecked(num_contexts, num_actions, vec![p; num_contexts * num_actions])
    }

    /// Point mass on `actions[x]` in every context `x`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (x, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::invalid(format!(
                    "action {a} out of range for {num_actions} actions"
                )));
            }
            probs[x * num_actions + a] = 1.0;
        }
        Ok(Policy::from_flat_unchecked(actions.len(), num_actions, probs))
    }

    pub fn validate(&self) -> Result<()> {
        for x in 0..self.num_contexts {
            let row = self.row(x);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!(
                    "policy row {x} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(format!(
                    "policy row {x} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.num_actions..(x + 1) * self.num_actions]
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.num_actions + a]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.num_actions)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.probs
    }

    /// `w * self + (1 - w) * other`.
    pub fn mixture(&self, other: &Policy, w: f64) -> Result<Policy> {
        check_dim(self.num_contexts, other.num_contexts)?;
        check_dim(self.num_actions, other.num_actions)?;
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| w * a + (1.0 - w) * b)
            .collect();
        Ok(Policy::from_flat_unchecked(
            self.num_contexts,
            self.num_actions,
            probs,
        ))
    }

    /// Entry-wise mean of a non-empty list of same-shape policies.
    pub fn average(policies: &[Policy]) -> Result<Policy> {
        let first = policies
            .first()
            .ok_or_else(|| Error::invalid("cannot average zero policies"))?;
        let mut acc = vec![0.0; first.probs.len()];
        for p in policies {
            check_dim(first.probs.len(), p.probs.len())?;
            for (s, v) in acc.iter_mut().zip(&p.probs) {
                *s += v;
            }
        }
        let n = policies.len() as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        Ok(Policy::from_flat_unchecked(
            first.num_contexts,
            first.num_actions,
            acc,
        ))
    }
}

/// Dense `contexts x actions x objectives` table of reward vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    num_contexts: usize,
    num_actions: usize,
    dim: usize,
    data: Vec<f64>,
}

impl RewardTable {
    pub fn zeros(num_contexts: usize, num_actions: usize, dim: usize) -> Self {
        RewardTable {
            num_contexts,
            num_actions,
            dim,
            data: vec![0.0; num_contexts * num_actions * dim],
        }
    }

    pub fn from_fn(
        num_contexts: usize,
        num_actions: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(num_contexts * num_actions * dim);
        for x in 0..num_contexts {
            for a in 0..num_actions {
                let v = f(x, a);
                check_dim(dim, v.len())?;
                data.extend(v);
            }
        }
        Ok(RewardTable {
            num_contexts,
            num_actions,
            dim,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.num_contexts, self.num_actions, self.dim)
    }

    pub fn get(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.num_actions + a) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn get_mut(&mut self, x: usize, a: usize) -> &mut [f64] {
        let start = (x * self.num_actions + a) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// `sum_{x,a} pi(a|x) * table(x,a)`.
    pub fn contract(&self, pi: &Policy) -> Result<ValueVector> {
        check_dim(self.num_contexts, pi.num_contexts())?;
        check_dim(self.num_actions, pi.num_actions())?;
        let mut out = vec![0.0; self.dim];
        for x in 0..self.num_contexts {
            for (a, &p) in pi.row(x).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(self.get(x, a)) {
                    *o += p * v;
                }
            }
        }
        Ok(ValueVector(out))
    }
}

/// Affine map between a raw objective and its normalized `[0, 1]` reward:
/// `raw = offset + scale * normalized`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveScale {
    pub name: String,
    pub unit: String,
    pub offset: f64,
    pub scale: f64,
}

impl ObjectiveScale {
    pub fn from_bounds(name: &str, unit: &str, lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::invalid(format!(
                "objective `{name}` needs finite bounds with upper > lower, got [{lower}, {upper}]"
            )));
        }
        Ok(ObjectiveScale {
            name: name.to_string(),
            unit: unit.to_string(),
            offset: lower,
            scale: upper - lower,
        })
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.offset) / self.scale
    }

    pub fn denormalize(&self, normalized: f64) -> f64 {
        self.offset + self.scale * normalized
    }
}

/// How rewards for a `(context, action)` pair are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardSource {
    /// Closed-form raw means plus Gaussian noise on the raw scale, then normalized.
    Analytic { raw_means: RewardTable, noise_sd: f64 },
    /// Uniform draw (with replacement) from per-cell lists of normalized reward vectors.
    Empirical { samples: Vec<Vec<Vec<Vec<f64>>>> },
}

/// A tabular multi-objective bandit instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub id: String,
    pub num_contexts: usize,
    pub num_actions: usize,
    pub num_objectives: usize,
    pub context_distribution: Vec<f64>,
    pub rewards: RewardSource,
    /// Normalized `E[r | x, a]` when known.
    pub true_mean_rewards: Option<RewardTable>,
    /// Held-out log used for ground truth when means are not known.
    pub evaluation_data: Option<LogDataset>,
    pub scales: Vec<ObjectiveScale>,
    pub context_labels: Vec<String>,
    pub action_labels: Vec<String>,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_contexts == 0 || self.num_actions == 0 || self.num_objectives == 0 {
            return Err(Error::invalid(
                "problem needs at least one context, action and objective",
            ));
        }
        check_dim(self.num_contexts, self.context_distribution.len())?;
        check_dim(self.num_objectives, self.scales.len())?;
        check_finite("context distribution", &self.context_distribution)?;
        if self.context_distribution.iter().any(|p| *p < 0.0) {
            return Err(Error::invalid("context distribution has a negative entry"));
        }
        let sum: f64 = self.context_distribution.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "context distribution sums to {sum}, expected 1"
            )));
        }
        if let Some(table) = &self.true_mean_rewards {
            if table.shape() != (self.num_contexts, self.num_actions, self.num_objectives) {
                return Err(Error::invalid("true_mean_rewards has the wrong shape"));
            }
        }
        match &self.rewards {
            RewardSource::Analytic { raw_means, noise_sd } => {
                if raw_means.shape() != (self.num_contexts, self.num_actions, self.num_objectives)
                {
                    return Err(Error::invalid("raw means have the wrong shape"));
                }
                if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                    return Err(Error::invalid("noise_sd must be finite and >= 0"));
                }
            }
            RewardSource::Empirical { samples } => {
                check_dim(self.num_contexts, samples.len())?;
                for cells in samples {
                    check_dim(self.num_actions, cells.len())?;
                    for cell in cells {
                        if cell.is_empty() {
                            return Err(Error::invalid("empirical reward cell has no samples"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.context_distribution, rng)
    }

    /// Draws one normalized reward vector for `(x, a)`.
    pub fn sample_reward<R: Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> Vec<f64> {
        match &self.rewards {
            RewardSource::Analytic {
                raw_means,
                noise_sd,
            } => raw_means
                .get(x, a)
                .iter()
                .zip(&self.scales)
                .map(|(mean, scale)| {
                    let raw = if *noise_sd > 0.0 {
                        mean + noise_sd * standard_normal(rng)
                    } else {
                        *mean
                    };
                    scale.normalize(raw)
                })
                .collect(),
            RewardSource::Empirical { samples } => {
                let cell = &samples[x][a];
                cell[rng.random_range(0..cell.len())].clone()
            }
        }
    }

    /// Table `C` with `V(pi) = sum_{x,a} pi(a|x) C(x,a)`.
    ///
    /// Analytic mode: `C(x,a) = P(x) E[r|x,a]`. Evaluation-data mode: the
    /// unclipped importance-weighted sum over the held-out log.
    pub fn value_coefficients(&self) -> Result<RewardTable> {
        if let Some(means) = &self.true_mean_rewards {
            return RewardTable::from_fn(
                self.num_contexts,
                self.num_actions,
                self.num_objectives,
                |x, a| {
                    means
                        .get(x, a)
                        .iter()
                        .map(|v| self.context_distribution[x] * v)
                        .collect()
                },
            );
        }
        let data = self.evaluation_data.as_ref().ok_or(Error::NoGroundTruth)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = data.len() as f64;
        let mut table = RewardTable::zeros(self.num_contexts, self.num_actions, self.num_objectives);
        for (j, rec) in data.records().iter().enumerate() {
            if rec.propensity <= 0.0 {
                return Err(Error::NonPositivePropensity {
                    value: rec.propensity,
                    record: j,
                });
            }
            let cell = table.get_mut(rec.context, rec.action);
            for (c, r) in cell.iter_mut().zip(&rec.reward) {
                *c += r / (rec.propensity * n);
            }
        }
        Ok(table)
    }

    /// Ground-truth value `V(pi)`.
    pub fn true_value(&self, pi: &Policy) -> Result<ValueVector> {
        self.value_coefficients()?.contract(pi)
    }

    pub fn denormalize(&self, v: &ValueVector) -> Vec<f64> {
        v.0.iter()
            .zip(&self.scales)
            .map(|(x, s)| s.denormalize(*x))
            .collect()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.true_mean_rewards.is_some() || self.evaluation_data.is_some()
    }
}

/// Free-function form of [`ProblemSpec::true_value`].
pub fn true_value(problem: &ProblemSpec, pi: &Policy) -> Result<ValueVector> {
    problem.true_value(pi)
}
