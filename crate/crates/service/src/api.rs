//! Request parsing and response bodies.
//!
//! Request bodies are decoded by hand from `serde_json::Value` so every
//! validation error can name the offending field.

use std::str::FromStr;

use imo3::algorithms::{Algorithm, Diagnostics, RunConfig};
use imo3::estimators::EstimatorKind;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Upper bound on `budget_t` accepted over HTTP.
pub const MAX_BUDGET: usize = 10_000;
/// Upper bound on `preselect_l` accepted over HTTP.
pub const MAX_PRESELECT: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Body is not JSON or not an object.
    Malformed,
    /// A field is missing, has the wrong type or is out of range.
    Invalid,
    NotFound,
    /// Answer for a round that has not been asked yet.
    Conflict,
    Expired,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    pub fn malformed(message: impl Into<String>) -> Self {
        ApiError {
            kind: ErrorKind::Malformed,
            message: message.into(),
            field: None,
        }
    }

    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            kind: ErrorKind::Invalid,
            message: format!("`{field}`: {}", message.into()),
            field: Some(field.to_string()),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            kind: ErrorKind::NotFound,
            message: message.into(),
            field: None,
        }
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        ApiError {
            kind: ErrorKind::Conflict,
            message: message.into(),
            field: None,
        }
    }

    pub fn expired(message: impl Into<String>) -> Self {
        ApiError {
            kind: ErrorKind::Expired,
            message: message.into(),
            field: None,
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError {
            kind: ErrorKind::Internal,
            message: message.into(),
            field: None,
        }
    }

    pub fn status(&self) -> u16 {
        match self.kind {
            ErrorKind::Malformed => 400,
            ErrorKind::Invalid => 422,
            ErrorKind::NotFound => 404,
            ErrorKind::Conflict => 409,
            ErrorKind::Expired => 410,
            ErrorKind::Internal => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.message.clone(),
            field: self.field.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub field: Option<String>,
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub problem_id: String,
    pub algorithm: Algorithm,
    pub config: RunConfig,
    /// Simulation-only scalarization used to report simple regret.
    pub theta_star: Option<Vec<f64>>,
}

const CREATE_FIELDS: [&str; 12] = [
    "problem_id",
    "algorithm",
    "estimator",
    "budget_t",
    "preselect_l",
    "clip_m",
    "seed",
    "ridge",
    "design_tolerance",
    "design_max_iters",
    "subtract_baseline",
    "theta_star",
];

fn object(body: &[u8]) -> Result<Map<String, Value>, ApiError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| ApiError::malformed(format!("invalid JSON: {e}")))?;
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(ApiError::malformed("request body must be a JSON object")),
    }
}

fn uint(m: &Map<String, Value>, field: &str, min: u64, max: u64) -> Result<Option<u64>, ApiError> {
    match m.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            let n = v
                .as_u64()
                .ok_or_else(|| ApiError::invalid(field, "must be a non-negative integer"))?;
            if n < min || n > max {
                return Err(ApiError::invalid(field, format!("must be in [{min}, {max}], got {n}")));
            }
            Ok(Some(n))
        }
    }
}

fn number(m: &Map<String, Value>, field: &str) -> Result<Option<f64>, ApiError> {
    match m.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| ApiError::invalid(field, "must be a finite number")),
    }
}

fn string<'a>(m: &'a Map<String, Value>, field: &str) -> Result<Option<&'a str>, ApiError> {
    match m.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(ApiError::invalid(field, "must be a string")),
    }
}

/// Decodes and validates a `POST /sessions` body.
pub fn parse_create_request(body: &[u8]) -> Result<CreateSessionRequest, ApiError> {
    let m = object(body)?;
    if let Some(k) = m.keys().find(|k| !CREATE_FIELDS.contains(&k.as_str())) {
        return Err(ApiError::invalid(k, "unknown field"));
    }
    let problem_id = string(&m, "problem_id")?
        .ok_or_else(|| ApiError::invalid("problem_id", "is required"))?
        .to_string();
    let algorithm = match string(&m, "algorithm")? {
        None => Algorithm::Imo3,
        Some(s) => Algorithm::from_str(s).map_err(|_| {
            ApiError::invalid("algorithm", format!("unknown algorithm `{s}`; expected imo3, rand_p, rand_t or log_ts"))
        })?,
    };

    let mut config = RunConfig::default();
    if let Some(s) = string(&m, "estimator")? {
        config.estimator_kind = EstimatorKind::from_str(s).map_err(|_| {
            ApiError::invalid("estimator", format!("unknown estimator `{s}`; expected dm, ips or dr"))
        })?;
    }
    if let Some(t) = uint(&m, "budget_t", 1, MAX_BUDGET as u64)? {
        config.budget_t = t as usize;
    }
    if let Some(l) = uint(&m, "preselect_l", 1, MAX_PRESELECT as u64)? {
        config.preselect_l = l as usize;
    }
    if let Some(s) = uint(&m, "seed", 0, u64::MAX)? {
        config.seed = s;
    }
    if let Some(n) = uint(&m, "design_max_iters", 1, 1_000_000)? {
        config.design_max_iters = n as usize;
    }
    if let Some(c) = number(&m, "clip_m")? {
        if c <= 0.0 {
            return Err(ApiError::invalid("clip_m", "must be > 0"));
        }
        config.clip_m = c;
    }
    if let Some(r) = number(&m, "ridge")? {
        if r < 0.0 {
            return Err(ApiError::invalid("ridge", "must be >= 0"));
        }
        config.ridge = r;
    }
    if let Some(tol) = number(&m, "design_tolerance")? {
        if tol < 0.0 {
            return Err(ApiError::invalid("design_tolerance", "must be >= 0"));
        }
        config.design_tolerance = tol;
    }
    match m.get("subtract_baseline") {
        None | Some(Value::Null) => {}
        Some(Value::Bool(b)) => config.subtract_baseline = *b,
        Some(_) => return Err(ApiError::invalid("subtract_baseline", "must be a boolean")),
    }
    let theta_star = match m.get("theta_star") {
        None | Some(Value::Null) => None,
        Some(Value::Array(xs)) => {
            let theta = xs
                .iter()
                .map(|x| x.as_f64().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| ApiError::invalid("theta_star", "must contain finite numbers"))?;
            if theta.is_empty() {
                return Err(ApiError::invalid("theta_star", "must not be empty"));
            }
            Some(theta)
        }
        Some(_) => return Err(ApiError::invalid("theta_star", "must be an array of numbers")),
    };
    Ok(CreateSessionRequest {
        problem_id,
        algorithm,
        config,
        theta_star,
    })
}

/// Body of `POST /sessions/{id}/answers`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub round: usize,
    pub answer: bool,
}

/// Decodes an answer body. `answer` accepts `0`, `1`, `true` or `false`.
pub fn parse_answer_request(body: &[u8]) -> Result<AnswerRequest, ApiError> {
    let m = object(body)?;
    if let Some(k) = m.keys().find(|k| *k != "round" && *k != "answer") {
        return Err(ApiError::invalid(k, "unknown field"));
    }
    let round = uint(&m, "round", 1, u64::MAX)?.ok_or_else(|| ApiError::invalid("round", "is required"))?;
    let answer = match m.get("answer") {
        None | Some(Value::Null) => return Err(ApiError::invalid("answer", "is required")),
        Some(Value::Bool(b)) => *b,
        Some(v) => match v.as_u64() {
            Some(0) => false,
            Some(1) => true,
            _ => return Err(ApiError::invalid("answer", format!("must be 0 or 1, got {v}"))),
        },
    };
    Ok(AnswerRequest {
        round: round as usize,
        answer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveInfo {
    pub name: String,
    pub unit: String,
}

/// Entry of `GET /problems`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInfo {
    pub id: String,
    pub description: String,
    pub num_contexts: usize,
    pub num_actions: usize,
    pub objectives: Vec<ObjectiveInfo>,
    pub log_records: usize,
    pub has_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayValue {
    pub name: String,
    pub unit: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub round: usize,
    pub budget_t: usize,
    /// Normalized values the model sees.
    pub value_vector: Vec<f64>,
    pub display: Vec<DisplayValue>,
    /// Reserved for payload additions such as uncertainty bands.
    pub extensions: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsweredView {
    pub round: usize,
    pub value_vector: Vec<f64>,
    pub display: Vec<DisplayValue>,
    pub answer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub theta_hat: Vec<f64>,
    pub final_value: Vec<f64>,
    pub final_display: Vec<DisplayValue>,
    /// Per-context action distribution of the final policy.
    pub final_policy: Vec<Vec<f64>>,
    /// `theta_hat' final_value`.
    pub utility_theta_hat: f64,
    /// Only for sessions created with `theta_star` on a problem with ground truth.
    pub simple_regret: Option<f64>,
    pub num_candidates: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingAnswer,
    Completed,
    Expired,
}

/// Snapshot returned by every session endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub problem_id: String,
    pub algorithm: Algorithm,
    pub estimator: EstimatorKind,
    pub state: SessionState,
    pub budget_t: usize,
    pub answered: usize,
    pub query: Option<QueryView>,
    pub history: Vec<AnsweredView>,
    pub result: Option<ResultView>,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub expires_at_ms: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_create_request_uses_defaults() {
        let r = parse_create_request(br#"{"problem_id":"zdt1"}"#).unwrap();
        assert_eq!(r.algorithm, Algorithm::Imo3);
        assert_eq!(r.config, RunConfig::default());
        assert_eq!(r.theta_star, None);
    }

    #[test]
    fn full_create_request() {
        let r = parse_create_request(
            br#"{"problem_id":"stock","algorithm":"log_ts","estimator":"DR","budget_t":5,
                "preselect_l":1,"clip_m":2.5,"seed":9,"ridge":0.0,"design_tolerance":0.1,
                "subtract_baseline":true,"theta_star":[0.5,-0.5]}"#,
        )
        .unwrap();
        assert_eq!(r.algorithm, Algorithm::LogTs);
        assert_eq!(r.config.estimator_kind, EstimatorKind::Dr);
        assert_eq!(r.config.budget_t, 5);
        assert_eq!(r.config.preselect_l, 1);
        assert_eq!(r.config.clip_m, 2.5);
        assert_eq!(r.config.seed, 9);
        assert!(r.config.subtract_baseline);
        assert_eq!(r.theta_star, Some(vec![0.5, -0.5]));
    }

    #[test]
    fn bad_estimator_names_the_field() {
        let e = parse_create_request(br#"{"problem_id":"zdt1","estimator":"snips"}"#).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Invalid);
        assert_eq!(e.field.as_deref(), Some("estimator"));
        assert!(e.message.contains("snips"));
    }

    #[test]
    fn create_field_errors() {
        let cases: [(&[u8], &str); 9] = [
            (br#"{}"#, "problem_id"),
            (br#"{"problem_id":3}"#, "problem_id"),
            (br#"{"problem_id":"z","algorithm":"ucb"}"#, "algorithm"),
            (br#"{"problem_id":"z","budget_t":0}"#, "budget_t"),
            (br#"{"problem_id":"z","budget_t":-4}"#, "budget_t"),
            (br#"{"problem_id":"z","clip_m":0}"#, "clip_m"),
            (br#"{"problem_id":"z","theta_star":[1,"a"]}"#, "theta_star"),
            (br#"{"problem_id":"z","subtract_baseline":1}"#, "subtract_baseline"),
            (br#"{"problem_id":"z","budget":5}"#, "budget"),
        ];
        for (body, field) in cases {
            let e = parse_create_request(body).unwrap_err();
            assert_eq!(e.field.as_deref(), Some(field), "{}", String::from_utf8_lossy(body));
            assert_eq!(e.status(), 422);
        }
    }

    #[test]
    fn malformed_bodies_are_400() {
        for body in [&b"not json"[..], b"[1,2]", b"", b"{\"problem_id\":"] {
            let e = parse_create_request(body).unwrap_err();
            assert_eq!(e.status(), 400);
        }
    }

    #[test]
    fn answers_accept_bits_and_booleans() {
        for (body, want) in [
            (&br#"{"round":1,"answer":1}"#[..], true),
            (br#"{"round":1,"answer":0}"#, false),
            (br#"{"round":1,"answer":true}"#, true),
            (br#"{"round":1,"answer":false}"#, false),
        ] {
            let a = parse_answer_request(body).unwrap();
            assert_eq!(a, AnswerRequest { round: 1, answer: want });
        }
    }

    #[test]
    fn answer_outside_bits_is_rejected() {
        for body in [
            &br#"{"round":1,"answer":2}"#[..],
            br#"{"round":1,"answer":0.5}"#,
            br#"{"round":1,"answer":"yes"}"#,
            br#"{"round":1,"answer":-1}"#,
            br#"{"round":1}"#,
        ] {
            let e = parse_answer_request(body).unwrap_err();
            assert_eq!(e.field.as_deref(), Some("answer"));
            assert_eq!(e.status(), 422);
        }
        let e = parse_answer_request(br#"{"round":0,"answer":1}"#).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("round"));
    }
}
