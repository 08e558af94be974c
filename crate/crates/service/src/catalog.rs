//! Problems and logged datasets loaded at startup.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use imo3::dataset::LogDataset;
use imo3::estimators::{EstimatorKind, OffPolicyEstimator};
use imo3::problems::{build_stock_problem, build_zdt1_problem, generate_log, make_dirichlet_logging_policy, Zdt1Config};
use imo3::rng::derive_seed;
use imo3::types::ProblemSpec;
use imo3::RunConfig;

use crate::api::{ObjectiveInfo, ProblemInfo};

type EstimatorKey = (EstimatorKind, u64);

#[derive(Debug)]
pub struct ProblemEntry {
    pub description: String,
    pub problem: ProblemSpec,
    pub dataset: LogDataset,
    estimators: Mutex<HashMap<EstimatorKey, Arc<OffPolicyEstimator>>>,
}

impl ProblemEntry {
    pub fn new(description: impl Into<String>, problem: ProblemSpec, dataset: LogDataset) -> Self {
        ProblemEntry {
            description: description.into(),
            problem,
            dataset,
            estimators: Mutex::new(HashMap::new()),
        }
    }

    pub fn id(&self) -> &str {
        &self.problem.id
    }

    /// Estimator for `config`, built once per (kind, clip level).
    pub fn estimator(&self, config: &RunConfig) -> imo3::Result<Arc<OffPolicyEstimator>> {
        let key = (config.estimator_kind, config.clip_m.to_bits());
        let mut cache = self.estimators.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(e) = cache.get(&key) {
            return Ok(Arc::clone(e));
        }
        let est = Arc::new(config.build_estimator(&self.dataset)?);
        cache.insert(key, Arc::clone(&est));
        Ok(est)
    }

    pub fn info(&self) -> ProblemInfo {
        ProblemInfo {
            id: self.problem.id.clone(),
            description: self.description.clone(),
            num_contexts: self.problem.num_contexts,
            num_actions: self.problem.num_actions,
            objectives: self
                .problem
                .scales
                .iter()
                .map(|s| ObjectiveInfo {
                    name: s.name.clone(),
                    unit: s.unit.clone(),
                })
                .collect(),
            log_records: self.dataset.len(),
            has_ground_truth: self.problem.has_ground_truth(),
        }
    }
}

/// Problems by id.
#[derive(Debug, Default)]
pub struct Catalog {
    entries: Vec<Arc<ProblemEntry>>,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    /// Adds `entry`, replacing any problem with the same id.
    pub fn insert(&mut self, entry: ProblemEntry) {
        self.entries.retain(|e| e.id() != entry.id());
        self.entries.push(Arc::new(entry));
    }

    pub fn get(&self, id: &str) -> Option<Arc<ProblemEntry>> {
        self.entries.iter().find(|e| e.id() == id).cloned()
    }

    pub fn infos(&self) -> Vec<ProblemInfo> {
        self.entries.iter().map(|e| e.info()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// ZDT1 and, if `prices` is given, the stock problem, each with a log
    /// of `log_size` records from a Dirichlet logging policy.
    pub fn standard(seed: u64, log_size: usize, prices: Option<&Path>) -> imo3::Result<Catalog> {
        let mut catalog = Catalog::new();
        let zdt1 = build_zdt1_problem(derive_seed(seed, &[1]), &Zdt1Config::default())?;
        catalog.insert(logged_entry(
            "ZDT1 objectives F1 and F2 over 5 contexts and 10 actions",
            zdt1,
            seed,
            log_size,
        )?);
        if let Some(path) = prices {
            let stock = build_stock_problem(path)?;
            catalog.insert(logged_entry(
                "Quarterly stock choice: relative gain and volatility",
                stock,
                seed,
                log_size,
            )?);
        }
        Ok(catalog)
    }
}

fn logged_entry(description: &str, problem: ProblemSpec, seed: u64, log_size: usize) -> imo3::Result<ProblemEntry> {
    let tag = problem.id.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let pi0 = make_dirichlet_logging_policy(&problem, 10.0, derive_seed(seed, &[2, tag]))?;
    let log = generate_log(&problem, &pi0, log_size, derive_seed(seed, &[3, tag]))?;
    Ok(ProblemEntry::new(description, problem, log))
}
