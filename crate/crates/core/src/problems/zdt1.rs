use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::types::{ObjectiveScale, ProblemSpec, RewardSource, RewardTable};
use rand::Rng;

/// Raw ZDT1 objectives `(F1, F2)` with `F1 = 5 x1` and
/// `F2 = g (1 - sqrt(x1 / g))`, `g = 1 + 9 sum_{i>=2} x_i / (n - 1)`.
pub fn zdt1_objectives(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::invalid(format!(
            "ZDT1 needs at least 2 variables, got {}",
            x.len()
        )));
    }
    if let Some((i, v)) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::invalid(format!(
            "ZDT1 variable x{} = {v} outside [0, 1]",
            i + 1
        )));
    }
    let n = x.len() as f64;
    let g = 1.0 + 9.0 * x[1..].iter().sum::<f64>() / (n - 1.0);
    let f1 = 5.0 * x[0];
    let f2 = g * (1.0 - (x[0] / g).sqrt());
    Ok((f1, f2))
}

/// A user-supplied objective over the decision vector `action ++ context`.
pub struct Objective {
    pub name: String,
    pub unit: String,
    /// Raw bounds used for normalization to `[0, 1]`.
    pub bounds: (f64, f64),
    pub f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Objective {
    pub fn new(
        name: &str,
        unit: &str,
        bounds: (f64, f64),
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Objective {
            name: name.to_string(),
            unit: unit.to_string(),
            bounds,
            f: Box::new(f),
        }
    }
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

/// The two ZDT1 objectives with their analytic bounds `F1 in [0,5]`, `F2 in [0,10]`.
pub fn zdt1_objective_set() -> Vec<Objective> {
    vec![
        Objective::new("F1", "", (0.0, 5.0), |x| {
            zdt1_objectives(x).map(|f| f.0).unwrap_or(f64::NAN)
        }),
        Objective::new("F2", "", (0.0, 10.0), |x| {
            zdt1_objectives(x).map(|f| f.1).unwrap_or(f64::NAN)
        }),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zdt1Config {
    pub num_contexts: usize,
    pub num_actions: usize,
    pub noise_sd: f64,
}

impl Default for Zdt1Config {
    fn default() -> Self {
        Zdt1Config {
            num_contexts: 5,
            num_actions: 10,
            noise_sd: 0.5,
        }
    }
}

/// Samples a ZDT1 grid: contexts are `(x4, x5)` pairs, actions `(x1, x2, x3)` triples.
pub fn zdt1_grids(seed: u64, num_contexts: usize, num_actions: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = seeded(seed);
    let contexts = (0..num_contexts)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let actions = (0..num_actions)
        .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
        .collect();
    (contexts, actions)
}

pub fn build_zdt1_problem(seed: u64, config: &Zdt1Config) -> Result<ProblemSpec> {
    let (contexts, actions) = zdt1_grids(seed, config.num_contexts, config.num_actions);
    build_pluggable_problem(
        "zdt1",
        &zdt1_objective_set(),
        &contexts,
        &actions,
        config.noise_sd,
    )
}

/// Builds an analytic problem whose raw mean for `(x, a)` is `f(action_a ++ context_x)`.
pub fn build_pluggable_problem(
    id: &str,
    objectives: &[Objective],
    contexts: &[Vec<f64>],
    actions: &[Vec<f64>],
    noise_sd: f64,
) -> Result<ProblemSpec> {
    if objectives.is_empty() || contexts.is_empty() || actions.is_empty() {
        return Err(Error::invalid(
            "need at least one objective, context and action",
        ));
    }
    let scales = objectives
        .iter()
        .map(|o| ObjectiveScale::from_bounds(&o.name, &o.unit, o.bounds.0, o.bounds.1))
        .collect::<Result<Vec<_>>>()?;
    let d = objectives.len();
    let mut raw = RewardTable::zeros(contexts.len(), actions.len(), d);
    for (x, ctx) in contexts.iter().enumerate() {
        for (a, act) in actions.iter().enumerate() {
            let decision: Vec<f64> = act.iter().chain(ctx.iter()).copied().collect();
            for (k, obj) in objectives.iter().enumerate() {
                let v = (obj.f)(&decision);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "objective `{}` at context {x}, action {a}",
                        obj.name
                    )));
                }
                raw.get_mut(x, a)[k] = v;
            }
        }
    }
    let means = RewardTable::from_fn(contexts.len(), actions.len(), d, |x, a| {
        raw.get(x, a)
            .iter()
            .zip(&scales)
            .map(|(v, s)| s.normalize(*v))
            .collect()
    })?;
    let problem = ProblemSpec {
        id: id.to_string(),
        num_contexts: contexts.len(),
        num_actions: actions.len(),
        num_objectives: d,
        context_distribution: vec![1.0 / contexts.len() as f64; contexts.len()],
        rewards: RewardSource::Analytic {
            raw_means: raw,
            noise_sd,
        },
        true_mean_rewards: Some(means),
        evaluation_data: None,
        scales,
        context_labels: contexts.iter().map(|c| format_point(c)).collect(),
        action_labels: actions.iter().map(|a| format_point(a)).collect(),
    };
    problem.validate()?;
    Ok(problem)
}

fn format_point(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("({})", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zdt1_reference_points() {
        assert_eq!(zdt1_objectives(&[0.0; 5]).unwrap(), (0.0, 1.0));
        assert_eq!(zdt1_objectives(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), (5.0, 0.0));
        let (f1, f2) = zdt1_objectives(&[1.0; 5]).unwrap();
        assert_eq!(f1, 5.0);
        // g = 10, F2 = 10 (1 - sqrt(1/10)) = 10 - sqrt(10)
        assert!((f2 - 6.837_722_339_831_62).abs() < 1e-12);
    }

    #[test]
    fn zdt1_rejects_out_of_box() {
        assert!(zdt1_objectives(&[1.2, 0.0]).is_err());
        assert!(zdt1_objectives(&[0.5, -0.1]).is_err());
        assert!(zdt1_objectives(&[0.5]).is_err());
        assert!(zdt1_objectives(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn zdt1_front_is_a_monotone_trade_off() {
        let mut prev = zdt1_objectives(&[0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        for i in 1..=20 {
            let x1 = i as f64 / 20.0;
            let cur = zdt1_objectives(&[x1, 0.0, 0.0, 0.0, 0.0]).unwrap();
            assert!((cur.1 - (1.0 - x1.sqrt())).abs() < 1e-12);
            assert!(cur.0 > prev.0 && cur.1 < prev.1);
            prev = cur;
        }
    }

    #[test]
    fn default_shape_and_determinism() {
        let p = build_zdt1_problem(4, &Zdt1Config::default()).unwrap();
        assert_eq!((p.num_contexts, p.num_actions, p.num_objectives), (5, 10, 2));
        assert_eq!(p, build_zdt1_problem(4, &Zdt1Config::default()).unwrap());
        assert_ne!(p, build_zdt1_problem(5, &Zdt1Config::default()).unwrap());
    }

    #[test]
    fn noise_free_samples_equal_means() {
        let cfg = Zdt1Config {
            noise_sd: 0.0,
            ..Zdt1Config::default()
        };
        let p = build_zdt1_problem(1, &cfg).unwrap();
        let means = p.true_mean_rewards.as_ref().unwrap();
        let mut rng = seeded(0);
        for x in 0..p.num_contexts {
            for a in 0..p.num_actions {
                assert_eq!(p.sample_reward(x, a, &mut rng), means.get(x, a));
            }
        }
    }

    #[test]
    fn pluggable_zdt1_matches_builder() {
        let cfg = Zdt1Config::default();
        let (ctx, act) = zdt1_grids(12, cfg.num_contexts, cfg.num_actions);
        let a = build_pluggable_problem("zdt1", &zdt1_objective_set(), &ctx, &act, cfg.noise_sd)
            .unwrap();
        assert_eq!(a, build_zdt1_problem(12, &cfg).unwrap());
    }

    #[test]
    fn pluggable_single_objective_and_shapes() {
        let single = vec![Objective::new("x1", "", (0.0, 1.0), |x| x[0])];
        let p = build_pluggable_problem("one", &single, &[vec![0.0]], &[vec![0.2], vec![0.8]], 0.0)
            .unwrap();
        assert_eq!(p.num_objectives, 1);
        assert_eq!(p.true_mean_rewards.as_ref().unwrap().get(0, 1), &[0.8]);

        let three: Vec<Objective> = (0..3)
            .map(|k| {
                Objective::new(&format!("f{k}"), "", (-10.0, 10.0), move |x| {
                    x.iter().sum::<f64>() * (k as f64 + 1.0)
                })
            })
            .collect();
        let ctx = vec![vec![0.1], vec![0.2]];
        let act = vec![vec![0.3], vec![0.4], vec![0.5], vec![0.6]];
        let p = build_pluggable_problem("affine", &three, &ctx, &act, 0.1).unwrap();
        assert_eq!(p.true_mean_rewards.as_ref().unwrap().shape(), (2, 4, 3));
    }

    #[test]
    fn pluggable_rejects_non_finite() {
        let bad = vec![Objective::new("bad", "", (0.0, 1.0), |x| x[0].ln())];
        let err = build_pluggable_problem("bad", &bad, &[vec![0.0]], &[vec![0.0]], 0.0);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
