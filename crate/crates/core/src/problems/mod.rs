//! Benchmark instances and logged-data generation.

mod stock;
mod zdt1;

pub use stock::{build_stock_problem, build_stock_problem_from_prices, StockPrices};
pub use zdt1::{
    build_pluggable_problem, build_zdt1_problem, zdt1_grids, zdt1_objective_set, zdt1_objectives,
    Objective, Zdt1Config,
};

use crate::dataset::{LogDataset, LoggedRecord};
use crate::error::{Error, Result};
use crate::rng::{dirichlet, sample_categorical, seeded};
use crate::types::{Policy, ProblemSpec};

/// One independent symmetric Dirichlet(alpha) row per context.
pub fn make_dirichlet_logging_policy(problem: &ProblemSpec, alpha: f64, seed: u64) -> Result<Policy> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("Dirichlet alpha must be > 0, got {alpha}")));
    }
    let mut rng = seeded(seed);
    let rows = (0..problem.num_contexts)
        .map(|_| dirichlet(alpha, problem.num_actions, &mut rng))
        .collect();
    Policy::from_rows(rows)
}

/// Draws `n` i.i.d. records: `x ~ P_x`, `a ~ pi0(.|x)`, `r ~ P_r(.|x,a)`.
pub fn generate_log(problem: &ProblemSpec, pi0: &Policy, n: usize, seed: u64) -> Result<LogDataset> {
    if n == 0 {
        return Err(Error::invalid("log size n must be >= 1"));
    }
    if pi0.num_contexts() != problem.num_contexts || pi0.num_actions() != problem.num_actions {
        return Err(Error::invalid("logging policy shape does not match the problem"));
    }
    let mut rng = seeded(seed);
    let records = (0..n)
        .map(|_| {
            let x = problem.sample_context(&mut rng);
            let a = sample_categorical(pi0.row(x), &mut rng);
            let reward = problem.sample_reward(x, a, &mut rng);
            LoggedRecord {
                context: x,
                action: a,
                reward,
                propensity: pi0.prob(x, a),
            }
        })
        .collect();
    LogDataset::new(
        problem.id.clone(),
        seed,
        problem.num_contexts,
        problem.num_actions,
        problem.num_objectives,
        records,
        Some(pi0.clone()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zdt1() -> ProblemSpec {
        build_zdt1_problem(3, &Zdt1Config::default()).unwrap()
    }

    #[test]
    fn dirichlet_policy_properties() {
        let p = zdt1();
        let pi0 = make_dirichlet_logging_policy(&p, 10.0, 5).unwrap();
        assert!(pi0.as_flat().iter().all(|v| *v > 0.0));
        assert_eq!(pi0, make_dirichlet_logging_policy(&p, 10.0, 5).unwrap());
        let flat = make_dirichlet_logging_policy(&p, 1e9, 5).unwrap();
        assert!(flat.as_flat().iter().all(|v| (v - 0.1).abs() < 1e-3));
        assert!(make_dirichlet_logging_policy(&p, 0.0, 5).is_err());
    }

    #[test]
    fn single_record_propensity() {
        let p = zdt1();
        let pi0 = make_dirichlet_logging_policy(&p, 10.0, 1).unwrap();
        let log = generate_log(&p, &pi0, 1, 2).unwrap();
        let r = &log.records()[0];
        assert_eq!(r.propensity, pi0.prob(r.context, r.action));
        assert!(generate_log(&p, &pi0, 0, 2).is_err());
    }

    #[test]
    fn log_is_reproducible() {
        let p = zdt1();
        let pi0 = make_dirichlet_logging_policy(&p, 10.0, 1).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_log(&p, &pi0, 500, 9).unwrap().write_ndjson(&mut a).unwrap();
        generate_log(&p, &pi0, 500, 9).unwrap().write_ndjson(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_logging_action_frequencies() {
        // Binomial concentration: each action's share within a context is
        // Bin(n_x, 0.1)/n_x with sd sqrt(0.09/n_x).
        let p = zdt1();
        let pi0 = Policy::uniform(p.num_contexts, p.num_actions);
        let log = generate_log(&p, &pi0, 100_000, 17).unwrap();
        let mut counts = vec![vec![0usize; p.num_actions]; p.num_contexts];
        for r in log.records() {
            counts[r.context][r.action] += 1;
        }
        for row in counts {
            let nx: usize = row.iter().sum();
            let sd = (0.09 / nx as f64).sqrt();
            for c in row {
                assert!((c as f64 / nx as f64 - 0.1).abs() < 3.0 * sd);
            }
        }
    }

    #[test]
    fn empirical_means_match_truth() {
        // 10^6 noisy draws per objective for one cell: sd of the mean is sigma/1000.
        let p = zdt1();
        let mut rng = seeded(77);
        let n = 1_000_000;
        let (x, a) = (2, 7);
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let r = p.sample_reward(x, a, &mut rng);
            sums[0] += r[0];
            sums[1] += r[1];
        }
        let truth = p.true_mean_rewards.as_ref().unwrap().get(x, a);
        for k in 0..2 {
            let sigma = 0.5 / p.scales[k].scale;
            let se = sigma / (n as f64).sqrt();
            assert!((sums[k] / n as f64 - truth[k]).abs() < 3.0 * se);
        }
    }
}
