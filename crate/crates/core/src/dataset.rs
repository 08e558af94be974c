//! Logged bandit feedback and its newline-delimited JSON file format.
//!
//! Line 1 is a header object with `problem_id`, `seed`, `d`, `K` and
//! `num_contexts` (plus an optional `logging_policy` matrix). Every
//! following line is one record `{"x": .., "a": .., "r": [..], "p": ..}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::types::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRecord {
    #[serde(rename = "x")]
    pub context: usize,
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "r")]
    pub reward: Vec<f64>,
    #[serde(rename = "p")]
    pub propensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    problem_id: String,
    seed: u64,
    d: usize,
    #[serde(rename = "K")]
    num_actions: usize,
    num_contexts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logging_policy: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogDataset {
    records: Vec<LoggedRecord>,
    logging_policy: Option<Policy>,
    problem_id: String,
    seed: u64,
    num_contexts: usize,
    num_actions: usize,
    dim: usize,
}

impl LogDataset {
    pub fn new(
        problem_id: impl Into<String>,
        seed: u64,
        num_contexts: usize,
        num_actions: usize,
        dim: usize,
        records: Vec<LoggedRecord>,
        logging_policy: Option<Policy>,
    ) -> Result<Self> {
        if num_contexts == 0 || num_actions == 0 || dim == 0 {
            return Err(Error::invalid(
                "dataset dimensions (contexts, actions, objectives) must be positive",
            ));
        }
        if let Some(pi0) = &logging_policy {
            check_dim(num_contexts, pi0.num_contexts())?;
            check_dim(num_actions, pi0.num_actions())?;
        }
        for (j, rec) in records.iter().enumerate() {
            validate_record(j, rec, num_contexts, num_actions, dim)?;
        }
        Ok(LogDataset {
            records,
            logging_policy,
            problem_id: problem_id.into(),
            seed,
            num_contexts,
            num_actions,
            dim,
        })
    }

    pub fn records(&self) -> &[LoggedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn logging_policy(&self) -> Option<&Policy> {
        self.logging_policy.as_ref()
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_contexts];
        for r in &self.records {
            counts[r.context] += 1;
        }
        counts
    }

    /// `pi0(a|x)` per cell, flat `contexts x actions`.
    ///
    /// Uses the stored logging policy when present. Otherwise observed cells
    /// take their logged propensity and unobserved cells share the residual
    /// mass of their context evenly (floored at a tiny positive value).
    pub fn propensity_table(&self) -> Vec<f64> {
        if let Some(pi0) = &self.logging_policy {
            return pi0.as_flat().to_vec();
        }
        let k = self.num_actions;
        let mut table = vec![f64::NAN; self.num_contexts * k];
        for r in &self.records {
            let cell = &mut table[r.context * k + r.action];
            if cell.is_nan() || r.propensity < *cell {
                *cell = r.propensity;
            }
        }
        for row in table.chunks_mut(k) {
            let observed: f64 = row.iter().filter(|v| !v.is_nan()).sum();
            let missing = row.iter().filter(|v| v.is_nan()).count();
            if missing > 0 {
                let share = ((1.0 - observed) / missing as f64).max(1e-12);
                row.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = share);
            }
        }
        table
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            problem_id: self.problem_id.clone(),
            seed: self.seed,
            d: self.dim,
            num_actions: self.num_actions,
            num_contexts: self.num_contexts,
            logging_policy: self.logging_policy.as_ref().map(Policy::to_rows),
        };
        serde_json::to_writer(&mut w, &header).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: Header = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        message: "missing header line".into(),
                    })
                }
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("bad header: {e}"),
                    })?;
                }
            }
        };
        let logging_policy = match header.logging_policy {
            Some(rows) => Some(Policy::from_rows(rows).map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad logging_policy: {e}"),
            })?),
            None => None,
        };
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LoggedRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            validate_record(
                records.len(),
                &rec,
                header.num_contexts,
                header.num_actions,
                header.d,
            )
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        LogDataset::new(
            header.problem_id,
            header.seed,
            header.num_contexts,
            header.num_actions,
            header.d,
            records,
            logging_policy,
        )
    }
}

fn validate_record(
    j: usize,
    rec: &LoggedRecord,
    num_contexts: usize,
    num_actions: usize,
    dim: usize,
) -> Result<()> {
    if rec.context >= num_contexts {
        return Err(Error::invalid(format!(
            "record {j}: context {} out of range (num_contexts = {num_contexts})",
            rec.context
        )));
    }
    if rec.action >= num_actions {
        return Err(Error::invalid(format!(
            "record {j}: action {} out of range (K = {num_actions})",
            rec.action
        )));
    }
    check_dim(dim, rec.reward.len())?;
    if rec.reward.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("reward of record {j}")));
    }
    if !(rec.propensity > 0.0 && rec.propensity <= 1.0) {
        return Err(Error::NonPositivePropensity {
            value: rec.propensity,
            record: j,
        });
    }
    Ok(())
}
