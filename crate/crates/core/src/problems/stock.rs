//! Daily closing prices turned into a two-objective investment problem.
//!
//! Actions are tickers, contexts are calendar quarters. A reward is drawn by
//! picking two consecutive trading days inside the quarter; objective 1 is
//! the gain `close[t+1] - close[t]`, objective 2 its absolute value.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::types::{ObjectiveScale, ProblemSpec, RewardSource, RewardTable};

#[derive(Debug, Clone, PartialEq)]
pub struct StockPrices {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `prices[row][ticker]`.
    pub prices: Vec<Vec<f64>>,
}

impl StockPrices {
    /// Parses `date,TICKER1,TICKER2,...` with ISO-8601 dates and decimal prices.
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| csv_err(1, "header", e.to_string()))?
            .clone();
        if headers.len() < 2 {
            return Err(csv_err(1, "header", "need a date column and at least one ticker"));
        }
        if !headers[0].eq_ignore_ascii_case("date") {
            return Err(csv_err(
                1,
                &headers[0],
                "first column must be `date`",
            ));
        }
        let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut seen = HashSet::new();
        for t in &tickers {
            if t.is_empty() {
                return Err(csv_err(1, "header", "empty ticker name"));
            }
            if !seen.insert(t.as_str()) {
                return Err(csv_err(1, t, "duplicate ticker"));
            }
        }

        let mut dates: Vec<NaiveDate> = Vec::new();
        let mut prices = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| csv_err(row, "-", e.to_string()))?;
            if rec.len() != headers.len() {
                return Err(csv_err(
                    row,
                    "-",
                    format!("expected {} fields, found {}", headers.len(), rec.len()),
                ));
            }
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| csv_err(row, "date", format!("bad date `{}`: {e}", &rec[0])))?;
            if let Some(prev) = dates.last() {
                if date <= *prev {
                    return Err(csv_err(row, "date", "dates must be strictly increasing"));
                }
            }
            let mut row_prices = Vec::with_capacity(tickers.len());
            for (k, ticker) in tickers.iter().enumerate() {
                let cell = &rec[k + 1];
                if cell.is_empty() {
                    return Err(csv_err(row, ticker, "missing price"));
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| csv_err(row, ticker, format!("bad price `{cell}`")))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(csv_err(row, ticker, format!("price `{cell}` must be finite and >= 0")));
                }
                row_prices.push(v);
            }
            dates.push(date);
            prices.push(row_prices);
        }
        if dates.is_empty() {
            return Err(csv_err(2, "-", "no price rows"));
        }
        Ok(StockPrices {
            tickers,
            dates,
            prices,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse(std::io::BufReader::new(file))
    }
}

fn csv_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Csv {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn quarter_key(d: &NaiveDate) -> (i32, u32) {
    (d.year(), (d.month() - 1) / 3 + 1)
}

pub fn build_stock_problem(prices_csv_path: &Path) -> Result<ProblemSpec> {
    build_stock_problem_from_prices(&StockPrices::from_path(prices_csv_path)?)
}

pub fn build_stock_problem_from_prices(data: &StockPrices) -> Result<ProblemSpec> {
    // Group consecutive rows by calendar quarter.
    let mut quarters: Vec<((i32, u32), Vec<usize>)> = Vec::new();
    for (i, d) in data.dates.iter().enumerate() {
        let key = quarter_key(d);
        match quarters.last_mut() {
            Some((k, rows)) if *k == key => rows.push(i),
            _ => quarters.push((key, vec![i])),
        }
    }
    let kept: Vec<((i32, u32), Vec<usize>)> = quarters
        .into_iter()
        .filter(|((y, q), rows)| {
            if rows.len() < 2 {
                log::warn!(
                    "dropping quarter {y}-Q{q}: {} trading day(s), need at least 2",
                    rows.len()
                );
                false
            } else {
                true
            }
        })
        .collect();
    if kept.is_empty() {
        return Err(csv_err(
            0,
            "date",
            "no calendar quarter has at least 2 trading days",
        ));
    }

    let k = data.tickers.len();
    // raw gains per (quarter, ticker)
    let mut raw: Vec<Vec<Vec<f64>>> = Vec::with_capacity(kept.len());
    let mut bound: f64 = 0.0;
    for (_, rows) in &kept {
        let mut per_ticker = vec![Vec::with_capacity(rows.len() - 1); k];
        for w in rows.windows(2) {
            for (t, gains) in per_ticker.iter_mut().enumerate() {
                let g = data.prices[w[1]][t] - data.prices[w[0]][t];
                bound = bound.max(g.abs());
                gains.push(g);
            }
        }
        raw.push(per_ticker);
    }
    if bound == 0.0 {
        bound = 1.0;
    }
    let gain_scale = ObjectiveScale {
        name: "relative gain".into(),
        unit: "USD".into(),
        offset: -bound,
        scale: 2.0 * bound,
    };
    let vol_scale = ObjectiveScale {
        name: "volatility".into(),
        unit: "USD".into(),
        offset: 0.0,
        scale: bound,
    };

    let samples: Vec<Vec<Vec<Vec<f64>>>> = raw
        .iter()
        .map(|per_ticker| {
            per_ticker
                .iter()
                .map(|gains| {
                    gains
                        .iter()
                        .map(|g| vec![gain_scale.normalize(*g), vol_scale.normalize(g.abs())])
                        .collect()
                })
                .collect()
        })
        .collect();
    let means = RewardTable::from_fn(kept.len(), k, 2, |x, a| {
        let cell = &samples[x][a];
        let n = cell.len() as f64;
        vec![
            cell.iter().map(|r| r[0]).sum::<f64>() / n,
            cell.iter().map(|r| r[1]).sum::<f64>() / n,
        ]
    })?;

    let problem = ProblemSpec {
        id: "stock".into(),
        num_contexts: kept.len(),
        num_actions: k,
        num_objectives: 2,
        context_distribution: vec![1.0 / kept.len() as f64; kept.len()],
        rewards: RewardSource::Empirical { samples },
        true_mean_rewards: Some(means),
        evaluation_data: None,
        scales: vec![gain_scale, vol_scale],
        context_labels: kept.iter().map(|((y, q), _)| format!("{y}-Q{q}")).collect(),
        action_labels: data.tickers.clone(),
    };
    problem.validate()?;
    Ok(problem)
}
