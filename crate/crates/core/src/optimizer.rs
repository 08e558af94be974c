//! Scalarized policy optimization.
//!
//! For tabular policies every estimator turns `theta . V_hat(pi)` into a
//! linear function of the entries `pi(a|x)`. The feasible set is a product
//! over contexts of "simplex with per-entry upper bounds", so the LP splits
//! into independent fractional-knapsack problems solved greedily.

use crate::dataset::LogDataset;
use crate::error::{check_dim, Error, Result};
use crate::estimators::{ClipLevel, EstimatorKind, OffPolicyEstimator, RewardModel};
use crate::types::{utility, Policy, Scalarization, ValueVector};

const CAP_SLACK: f64 = 1e-12;

/// `theta . V_hat(pi) = constant + sum_{x,a} coeffs(x,a) pi(a|x)` over
/// policies with `pi(a|x) <= caps(x,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarizedCoefficients {
    num_contexts: usize,
    num_actions: usize,
    pub constant: f64,
    coeffs: Vec<f64>,
    caps: Vec<f64>,
}

impl ScalarizedCoefficients {
    pub fn new(
        num_contexts: usize,
        num_actions: usize,
        constant: f64,
        coeffs: Vec<f64>,
        caps: Vec<f64>,
    ) -> Result<Self> {
        check_dim(num_contexts * num_actions, coeffs.len())?;
        check_dim(num_contexts * num_actions, caps.len())?;
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("scalarized coefficients".into()));
        }
        if caps.iter().any(|c| c.is_nan() || *c <= 0.0) {
            return Err(Error::invalid("caps must be > 0"));
        }
        Ok(ScalarizedCoefficients {
            num_contexts,
            num_actions,
            constant,
            coeffs,
            caps,
        })
    }

    /// Coefficients with no caps beyond the simplex.
    pub fn uncapped(num_contexts: usize, num_actions: usize, coeffs: Vec<f64>) -> Result<Self> {
        let caps = vec![1.0; num_contexts * num_actions];
        Self::new(num_contexts, num_actions, 0.0, coeffs, caps)
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn coeff(&self, x: usize, a: usize) -> f64 {
        self.coeffs[x * self.num_actions + a]
    }

    pub fn cap(&self, x: usize, a: usize) -> f64 {
        self.caps[x * self.num_actions + a]
    }

    pub fn coeff_row(&self, x: usize) -> &[f64] {
        &self.coeffs[x * self.num_actions..(x + 1) * self.num_actions]
    }

    pub fn cap_row(&self, x: usize) -> &[f64] {
        &self.caps[x * self.num_actions..(x + 1) * self.num_actions]
    }

    pub fn caps(&self) -> &[f64] {
        &self.caps
    }

    /// `constant + sum coeffs * pi`.
    pub fn objective(&self, pi: &Policy) -> f64 {
        self.constant
            + self
                .coeffs
                .iter()
                .zip(pi.as_flat())
                .map(|(c, p)| c * p)
                .sum::<f64>()
    }

    /// True when `pi` respects every cap (with a tiny slack).
    pub fn admits(&self, pi: &Policy) -> bool {
        pi.as_flat()
            .iter()
            .zip(&self.caps)
            .all(|(p, c)| *p <= c + CAP_SLACK)
    }
}

/// Builds the linear form of `theta . V_hat` for the given estimator.
///
/// IPS requires a clip level and restricts the feasible set to policies
/// with `pi(a|x) <= M pi0(a|x)`; DM and DR are uncapped. DM and DR fit the
/// empirical-mean model when `model` is `None`.
pub fn scalarized_coefficients(
    kind: EstimatorKind,
    model: Option<&RewardModel>,
    data: &LogDataset,
    theta: &Scalarization,
    clip: Option<ClipLevel>,
) -> Result<ScalarizedCoefficients> {
    let clip = match (kind, clip) {
        (EstimatorKind::Ips, None) => {
            return Err(Error::invalid("IPS coefficients need a clip level M"))
        }
        (_, Some(c)) => c,
        (_, None) => ClipLevel::unclipped(),
    };
    OffPolicyEstimator::new(kind, data, clip, model.cloned())?.coefficients(theta)
}

/// Greedy water-filling per context: actions in descending coefficient
/// order (ties to the lower index) each take `min(cap, remaining)`.
pub fn optimize_scalarized(coeffs: &ScalarizedCoefficients) -> Result<Policy> {
    let k = coeffs.num_actions;
    let mut probs = vec![0.0; coeffs.num_contexts * k];
    let mut order: Vec<usize> = (0..k).collect();
    for x in 0..coeffs.num_contexts {
        let caps = coeffs.cap_row(x);
        let total: f64 = caps.iter().map(|c| c.min(1.0)).sum();
        if total < 1.0 - CAP_SLACK {
            return Err(Error::InfeasibleCaps {
                context: x,
                sum: total,
            });
        }
        let row = coeffs.coeff_row(x);
        order.sort_by(|&i, &j| row[j].total_cmp(&row[i]).then(i.cmp(&j)));
        let out = &mut probs[x * k..(x + 1) * k];
        let mut remaining = 1.0;
        for &a in &order {
            if remaining <= 0.0 {
                break;
            }
            let mass = caps[a].min(remaining);
            out[a] = mass;
            remaining -= mass;
        }
        if remaining > 0.0 {
            // caps short of 1 by at most CAP_SLACK
            out[order[0]] += remaining;
        }
    }
    Ok(Policy::from_flat_unchecked(coeffs.num_contexts, k, probs))
}

/// All vertices of `{p in simplex : p <= caps}` for one context, by brute
/// force over "zero / at cap / free" labelings with at most one free entry.
pub fn enumerate_vertex_rows(caps: &[f64]) -> Result<Vec<Vec<f64>>> {
    let k = caps.len();
    if k > 12 {
        return Err(Error::TooLarge {
            combinations: 3u128.pow(k as u32),
            limit: 3u128.pow(12),
        });
    }
    let caps: Vec<f64> = caps.iter().map(|c| c.min(1.0)).collect();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let total = 3usize.pow(k as u32);
    for code in 0..total {
        let mut labels = Vec::with_capacity(k);
        let mut c = code;
        for _ in 0..k {
            labels.push(c % 3);
            c /= 3;
        }
        let free: Vec<usize> = (0..k).filter(|&i| labels[i] == 2).collect();
        if free.len() > 1 {
            continue;
        }
        let mut row = vec![0.0; k];
        let mut mass = 0.0;
        for i in 0..k {
            if labels[i] == 1 {
                row[i] = caps[i];
                mass += caps[i];
            }
        }
        match free.first() {
            Some(&f) => {
                let rest = 1.0 - mass;
                if rest < -CAP_SLACK || rest > caps[f] + CAP_SLACK {
                    continue;
                }
                row[f] = rest.max(0.0);
            }
            None => {
                if (mass - 1.0).abs() > CAP_SLACK {
                    continue;
                }
            }
        }
        if !out
            .iter()
            .any(|r| r.iter().zip(&row).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            out.push(row);
        }
    }
    Ok(out)
}

/// Every joint vertex policy (product of per-context vertex sets).
/// `caps = None` means the plain simplex, whose vertices are the
/// deterministic policies.
pub fn enumerate_vertex_policies(
    num_contexts: usize,
    num_actions: usize,
    caps: Option<&[f64]>,
    limit: u128,
) -> Result<Vec<Policy>> {
    let per_context: Vec<Vec<Vec<f64>>> = (0..num_contexts)
        .map(|x| match caps {
            Some(c) => enumerate_vertex_rows(&c[x * num_actions..(x + 1) * num_actions]),
            None => Ok((0..num_actions)
                .map(|a| {
                    let mut r = vec![0.0; num_actions];
                    r[a] = 1.0;
                    r
                })
                .collect()),
        })
        .collect::<Result<_>>()?;
    let combos = per_context
        .iter()
        .try_fold(1u128, |acc, v| acc.checked_mul(v.len() as u128))
        .unwrap_or(u128::MAX);
    if combos > limit {
        return Err(Error::TooLarge {
            combinations: combos,
            limit,
        });
    }
    let mut out = Vec::with_capacity(combos as usize);
    let mut idx = vec![0usize; num_contexts];
    loop {
        let mut probs = Vec::with_capacity(num_contexts * num_actions);
        for (x, &i) in idx.iter().enumerate() {
            probs.extend_from_slice(&per_context[x][i]);
        }
        out.push(Policy::from_flat_unchecked(num_contexts, num_actions, probs));
        let mut pos = 0;
        loop {
            if pos == num_contexts {
                return Ok(out);
            }
            idx[pos] += 1;
            if idx[pos] < per_context[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Default enumeration budget for [`brute_force_optimize`].
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Test oracle: evaluates `value_of` on every joint vertex policy and
/// returns the utility maximizer (first one on ties).
pub fn brute_force_optimize<F>(
    num_contexts: usize,
    num_actions: usize,
    caps: Option<&[f64]>,
    theta: &Scalarization,
    mut value_of: F,
) -> Result<(Policy, ValueVector)>
where
    F: FnMut(&Policy) -> Result<ValueVector>,
{
    let vertices = enumerate_vertex_policies(num_contexts, num_actions, caps, BRUTE_FORCE_LIMIT)?;
    let valued = vertices
        .into_iter()
        .map(|p| {
            let v = value_of(&p)?;
            Ok((p, v))
        })
        .collect::<Result<Vec<_>>>()?;
    best_of(&valued, theta).map(|i| valued[i].clone())
}

/// Index of the utility maximizer among precomputed `(policy, value)` pairs.
pub fn best_of(candidates: &[(Policy, ValueVector)], theta: &Scalarization) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (_, v)) in candidates.iter().enumerate() {
        let u = utility(theta, v)?;
        if best.is_none_or(|(_, b)| u > b) {
            best = Some((i, u));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("no candidates to choose from"))
}
