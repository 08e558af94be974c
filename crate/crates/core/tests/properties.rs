use imo3::algorithms::{true_optimum, Algorithm};
use imo3::dataset::{LogDataset, LoggedRecord};
use imo3::design::{g_optimal_design, leverage_score};
use imo3::elicitation::{
    logistic_mle, penalized_gradient, penalized_log_likelihood, response_probability,
    QueryRecord, DEFAULT_RIDGE,
};
use imo3::estimators::{
    dm_estimate, dr_estimate, fit_reward_model, ips_estimate, ClipLevel, EstimatorKind,
    OffPolicyEstimator,
};
use imo3::harness::{aggregate, mean_se, ResultRow, RowKind};
use imo3::optimizer::{enumerate_vertex_policies, BRUTE_FORCE_LIMIT};
use imo3::problems::{
    build_zdt1_problem, generate_log, make_dirichlet_logging_policy, zdt1_objectives, Zdt1Config,
};
use imo3::types::{simple_regret, utility, Policy, Scalarization, ValueVector};
use proptest::prelude::*;

fn simplex_row(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn policy(nc: usize, k: usize) -> impl Strategy<Value = Policy> {
    prop::collection::vec(simplex_row(k), nc).prop_map(|rows| Policy::from_rows(rows).unwrap())
}

fn small_log(seed: u64, nc: usize, k: usize) -> (LogDataset, Policy) {
    let p = build_zdt1_problem(
        seed,
        &Zdt1Config {
            num_contexts: nc,
            num_actions: k,
            noise_sd: 0.5,
        },
    )
    .unwrap();
    let pi0 = make_dirichlet_logging_policy(&p, 2.0, seed + 1).unwrap();
    (generate_log(&p, &pi0, 300, seed + 2).unwrap(), pi0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn utility_is_linear(
        theta in prop::collection::vec(-1.0f64..1.0, 3),
        v1 in prop::collection::vec(0.0f64..1.0, 3),
        v2 in prop::collection::vec(0.0f64..1.0, 3),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let th = Scalarization::new(theta);
        let mix = ValueVector::new(v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect());
        let lhs = utility(&th, &mix).unwrap();
        let rhs = a * utility(&th, &ValueVector::new(v1)).unwrap()
            + b * utility(&th, &ValueVector::new(v2)).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn true_value_is_affine(seed in 0u64..1000, w in 0.0f64..1.0, p1 in policy(5, 10), p2 in policy(5, 10)) {
        let problem = build_zdt1_problem(seed, &Zdt1Config::default()).unwrap();
        let mix = p1.mixture(&p2, w).unwrap();
        let v = problem.true_value(&mix).unwrap();
        let v1 = problem.true_value(&p1).unwrap();
        let v2 = problem.true_value(&p2).unwrap();
        for k in 0..2 {
            prop_assert!((v.0[k] - (w * v1.0[k] + (1.0 - w) * v2.0[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn regret_nonnegative_against_vertex_oracle(seed in 0u64..500, theta in prop::collection::vec(-1.0f64..1.0, 2)) {
        let problem = build_zdt1_problem(seed, &Zdt1Config { num_contexts: 2, num_actions: 3, noise_sd: 0.5 }).unwrap();
        let th = Scalarization::new(theta);
        let (_, v_opt) = true_optimum(&problem, &th).unwrap();
        for pi in enumerate_vertex_policies(2, 3, None, BRUTE_FORCE_LIMIT).unwrap() {
            let v = problem.true_value(&pi).unwrap();
            prop_assert!(simple_regret(&th, &v_opt, &v).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn estimators_are_linear(seed in 0u64..300, w in 0.0f64..1.0, p1 in policy(2, 3), p2 in policy(2, 3)) {
        let (log, _) = small_log(seed, 2, 3);
        let model = fit_reward_model(&log).unwrap();
        let mix = p1.mixture(&p2, w).unwrap();
        let checks: [&dyn Fn(&Policy) -> ValueVector; 3] = [
            &|p| dm_estimate(&model, &log, p).unwrap(),
            &|p| ips_estimate(&log, p, ClipLevel::unclipped()).unwrap(),
            &|p| dr_estimate(&model, &log, p).unwrap(),
        ];
        for f in checks {
            let (m, a, b) = (f(&mix), f(&p1), f(&p2));
            for k in 0..2 {
                prop_assert!((m.0[k] - (w * a.0[k] + (1.0 - w) * b.0[k])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn clipped_ips_linear_inside_caps(seed in 0u64..300, w in 0.0f64..1.0, m in 1.0f64..5.0) {
        // mixtures of pi0 with policies inside the caps never clip
        let (log, pi0) = small_log(seed, 2, 3);
        let clip = ClipLevel::new(m).unwrap();
        let est = OffPolicyEstimator::new(EstimatorKind::Ips, &log, clip, None).unwrap();
        let th = Scalarization::new(vec![0.3, -0.4]);
        let greedy = imo3::optimizer::optimize_scalarized(&est.coefficients(&th).unwrap()).unwrap();
        let mix = greedy.mixture(&pi0, w).unwrap();
        let f = |p: &Policy| ips_estimate(&log, p, clip).unwrap();
        let (v, a, b) = (f(&mix), f(&greedy), f(&pi0));
        for k in 0..2 {
            prop_assert!((v.0[k] - (w * a.0[k] + (1.0 - w) * b.0[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn ips_monotone_in_clip(seed in 0u64..300, pi in policy(2, 3), m1 in 0.1f64..5.0, dm in 0.0f64..20.0) {
        // shifted rewards so every coordinate is >= 0
        let (log, pi0) = small_log(seed, 2, 3);
        let records: Vec<LoggedRecord> = log.records().iter().map(|r| LoggedRecord {
            reward: r.reward.iter().map(|v| v.abs()).collect(),
            ..r.clone()
        }).collect();
        let log = LogDataset::new("abs", 0, 2, 3, 2, records, Some(pi0)).unwrap();
        let lo = ips_estimate(&log, &pi, ClipLevel::new(m1).unwrap()).unwrap();
        let hi = ips_estimate(&log, &pi, ClipLevel::new(m1 + dm).unwrap()).unwrap();
        for k in 0..2 {
            prop_assert!(hi.0[k] >= lo.0[k] - 1e-12);
        }
    }

    #[test]
    fn generated_propensities_positive_and_exact(seed in 0u64..300, alpha in 0.2f64..20.0) {
        let p = build_zdt1_problem(seed, &Zdt1Config::default()).unwrap();
        let pi0 = make_dirichlet_logging_policy(&p, alpha, seed).unwrap();
        let log = generate_log(&p, &pi0, 200, seed).unwrap();
        for r in log.records() {
            prop_assert!(r.propensity > 0.0);
            prop_assert!((r.propensity - pi0.prob(r.context, r.action)).abs() <= 1e-12);
        }
    }

    #[test]
    fn zdt1_front_tradeoff(x1 in 0.0f64..1.0, dx in 0.001f64..0.5) {
        let x2 = (x1 + dx).min(1.0);
        prop_assume!(x2 > x1);
        let (f1a, f2a) = zdt1_objectives(&[x1, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (f1b, f2b) = zdt1_objectives(&[x2, 0.0, 0.0, 0.0, 0.0]).unwrap();
        prop_assert!((f2a - (1.0 - x1.sqrt())).abs() < 1e-12);
        prop_assert!(f1b > f1a && f2b < f2a);
    }

    #[test]
    fn response_probability_strict_and_monotone(z1 in -30.0f64..30.0, dz in 0.001f64..5.0) {
        let th = Scalarization::new(vec![1.0]);
        let p1 = response_probability(&th, &ValueVector::new(vec![z1])).unwrap();
        let p2 = response_probability(&th, &ValueVector::new(vec![z1 + dz])).unwrap();
        prop_assert!(p1 > 0.0 && p1 < 1.0);
        prop_assert!(p2 > p1);
    }

    #[test]
    fn mle_is_stationary_and_beats_references(
        vs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 5..60),
        theta_star in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let queries: Vec<QueryRecord> = vs.iter().enumerate().map(|(i, (a, b, y))| QueryRecord {
            value_vector: ValueVector::new(vec![*a, *b]),
            answer: *y,
            round: i + 1,
        }).collect();
        let fit = logistic_mle(&queries, DEFAULT_RIDGE).unwrap();
        let th = fit.theta.as_slice();
        let g = penalized_gradient(&queries, th, DEFAULT_RIDGE);
        if fit.converged {
            prop_assert!(g.iter().all(|v| v.abs() <= 1e-6));
        }
        let at = |t: &[f64]| penalized_log_likelihood(&queries, t, DEFAULT_RIDGE);
        prop_assert!(at(th) >= at(&[0.0, 0.0]) - 1e-9);
        prop_assert!(at(th) >= at(&theta_star) - 1e-9);
    }

    #[test]
    fn design_weights_valid(
        vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..30),
    ) {
        let w = g_optimal_design(&vs, 0.05, 10_000).unwrap();
        let sum: f64 = w.alpha.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(w.alpha.iter().all(|a| *a >= 0.0));
        let k = w.effective_dim;
        prop_assert!(w.support_size(1e-6) <= k * (k + 1) / 2 + 1);
        if k > 0 && w.converged {
            prop_assert!(w.g_value >= k as f64 - 1e-6);
            prop_assert!(w.g_value <= k as f64 * 1.05 + 1e-9);
        }
        let lev = leverage_score(&vs, &w.alpha).unwrap();
        prop_assert!((lev.g - w.g_value).abs() < 1e-12);
    }

    #[test]
    fn se_recomputable_from_detail_rows(vals in prop::collection::vec(0.0f64..1.0, 1..40)) {
        let rows: Vec<ResultRow> = vals.iter().enumerate().map(|(i, v)| ResultRow {
            kind: RowKind::Run,
            algorithm: Algorithm::Imo3,
            estimator: EstimatorKind::Ips,
            t: 10,
            n: 100,
            dataset: Some(0),
            theta: Some(0),
            run: Some(i),
            seed: Some(i as u64),
            simple_regret: *v,
            simple_regret_se: None,
            theta_error: *v,
            theta_error_se: None,
            value_error: *v,
            value_error_se: None,
            g_value: None,
            num_candidates: None,
            count: 1,
        }).collect();
        let agg = aggregate(&rows);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let se = if vals.len() < 2 { 0.0 } else {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        };
        prop_assert!((agg[0].simple_regret - mean).abs() < 1e-12);
        prop_assert!((agg[0].simple_regret_se.unwrap() - se).abs() < 1e-12);
        prop_assert_eq!(mean_se(&vals).0, agg[0].simple_regret);
    }

    #[test]
    fn ndjson_round_trip(seed in 0u64..200, n in 1usize..50) {
        let (log, _) = small_log(seed, 2, 3);
        let records = log.records()[..n.min(log.len())].to_vec();
        let log = LogDataset::new("p", seed, 2, 3, 2, records, log.logging_policy().cloned()).unwrap();
        let mut buf = Vec::new();
        log.write_ndjson(&mut buf).unwrap();
        let back = LogDataset::read_ndjson(&buf[..]).unwrap();
        prop_assert_eq!(back, log);
    }

    #[test]
    fn ndjson_reader_never_panics(text in "\\PC{0,400}") {
        let _ = LogDataset::read_ndjson(text.as_bytes());
    }

    #[test]
    fn stock_parser_never_panics(text in "(date,[A-Z]{1,3}(,[A-Z]{1,3}){0,2}\n)?([0-9\\-]{0,10}(,[0-9.\\-e]{0,6}){0,3}\n){0,8}") {
        let _ = imo3::problems::StockPrices::parse(text.as_bytes());
    }
}
