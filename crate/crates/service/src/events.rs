//! Append-only per-session event logs, one JSON object per line.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use imo3::algorithms::{Algorithm, RunConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        problem_id: String,
        algorithm: Algorithm,
        config: RunConfig,
        #[serde(default)]
        theta_star: Option<Vec<f64>>,
        at_ms: u64,
    },
    Answered {
        round: usize,
        answer: bool,
        at_ms: u64,
    },
}

/// A decoded log: the creation event followed by answers for rounds 1..=n.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub session_id: String,
    pub problem_id: String,
    pub algorithm: Algorithm,
    pub config: RunConfig,
    pub theta_star: Option<Vec<f64>>,
    pub created_at_ms: u64,
    pub answers: Vec<bool>,
    pub updated_at_ms: u64,
    /// A torn final line (no trailing newline) was skipped.
    pub truncated_tail: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum EventLogError {
    #[error("event log is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

fn line_err(line: usize, message: impl Into<String>) -> EventLogError {
    EventLogError::Line {
        line,
        message: message.into(),
    }
}

/// Parses and checks a session log. A final line without a newline that
/// fails to parse is treated as an interrupted write and dropped.
pub fn parse_event_log(text: &str) -> Result<EventLog, EventLogError> {
    let mut lines: Vec<(usize, &str)> = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut truncated_tail = false;
    if !text.ends_with('\n') {
        if let Some(&(_, last)) = lines.last() {
            if serde_json::from_str::<SessionEvent>(last).is_err() {
                lines.pop();
                truncated_tail = true;
            }
        }
    }
    let mut events = lines.into_iter().map(|(n, l)| {
        serde_json::from_str::<SessionEvent>(l)
            .map(|e| (n, e))
            .map_err(|e| line_err(n, e.to_string()))
    });
    let (n, first) = events.next().ok_or(EventLogError::Empty)??;
    let SessionEvent::Created {
        session_id,
        problem_id,
        algorithm,
        config,
        theta_star,
        at_ms,
    } = first
    else {
        return Err(line_err(n, "first event must be `created`"));
    };
    let mut log = EventLog {
        session_id,
        problem_id,
        algorithm,
        config,
        theta_star,
        created_at_ms: at_ms,
        answers: Vec::new(),
        updated_at_ms: at_ms,
        truncated_tail,
    };
    for item in events {
        let (n, event) = item?;
        match event {
            SessionEvent::Created { .. } => return Err(line_err(n, "duplicate `created` event")),
            SessionEvent::Answered { round, answer, at_ms } => {
                let expected = log.answers.len() + 1;
                if round != expected {
                    return Err(line_err(n, format!("expected round {expected}, got {round}")));
                }
                if round > log.config.budget_t {
                    return Err(line_err(n, format!("round {round} exceeds budget {}", log.config.budget_t)));
                }
                log.answers.push(answer);
                log.updated_at_ms = log.updated_at_ms.max(at_ms);
            }
        }
    }
    Ok(log)
}

/// Writer for one session's log file.
#[derive(Debug)]
pub struct EventWriter {
    path: PathBuf,
}

impl EventWriter {
    /// Creates a new log; fails if the file already exists.
    pub fn create(path: &Path, created: &SessionEvent) -> std::io::Result<Self> {
        let file = OpenOptions::new().write(true).create_new(true).open(path)?;
        let w = EventWriter {
            path: path.to_path_buf(),
        };
        w.write_to(file, created)?;
        Ok(w)
    }

    /// Appends to an existing log. A torn final line is cut off; a complete
    /// one missing its newline gets one.
    pub fn reopen(path: &Path, truncated_tail: bool) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        if truncated_tail {
            let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(keep as u64)?;
            f.sync_data()?;
        } else if bytes.last().is_some_and(|b| *b != b'\n') {
            let mut f = OpenOptions::new().append(true).open(path)?;
            f.write_all(b"\n")?;
            f.sync_data()?;
        }
        Ok(EventWriter {
            path: path.to_path_buf(),
        })
    }

    pub fn append(&self, event: &SessionEvent) -> std::io::Result<()> {
        let file = OpenOptions::new().append(true).open(&self.path)?;
        self.write_to(file, event)
    }

    fn write_to(&self, mut file: File, event: &SessionEvent) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn created() -> SessionEvent {
        SessionEvent::Created {
            session_id: "ab12".into(),
            problem_id: "zdt1".into(),
            algorithm: Algorithm::RandT,
            config: RunConfig {
                budget_t: 3,
                ..RunConfig::default()
            },
            theta_star: None,
            at_ms: 10,
        }
    }

    fn answered(round: usize, answer: bool) -> SessionEvent {
        SessionEvent::Answered {
            round,
            answer,
            at_ms: 10 + round as u64,
        }
    }

    fn text(events: &[SessionEvent]) -> String {
        events
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect()
    }

    #[test]
    fn round_trip() {
        let log = parse_event_log(&text(&[created(), answered(1, true), answered(2, false)])).unwrap();
        assert_eq!(log.session_id, "ab12");
        assert_eq!(log.answers, vec![true, false]);
        assert_eq!(log.created_at_ms, 10);
        assert_eq!(log.updated_at_ms, 12);
        assert!(!log.truncated_tail);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let mut t = text(&[created(), answered(1, true)]);
        t.push_str("{\"event\":\"answered\",\"rou");
        let log = parse_event_log(&t).unwrap();
        assert_eq!(log.answers, vec![true]);
        assert!(log.truncated_tail);
    }

    #[test]
    fn complete_unterminated_tail_is_kept() {
        let mut t = text(&[created(), answered(1, true)]);
        t.pop();
        let log = parse_event_log(&t).unwrap();
        assert_eq!(log.answers, vec![true]);
        assert!(!log.truncated_tail);
    }

    #[test]
    fn rejects_bad_sequences() {
        assert_eq!(parse_event_log(""), Err(EventLogError::Empty));
        let cases = [
            (text(&[answered(1, true)]), 1),
            (text(&[created(), answered(2, true)]), 2),
            (text(&[created(), answered(1, true), answered(1, true)]), 3),
            (text(&[created(), created()]), 2),
            (
                text(&[created(), answered(1, true), answered(2, true), answered(3, true), answered(4, true)]),
                5,
            ),
            (text(&[created()]) + "garbage\n", 2),
        ];
        for (t, line) in cases {
            match parse_event_log(&t) {
                Err(EventLogError::Line { line: l, .. }) => assert_eq!(l, line, "{t}"),
                other => panic!("expected line error, got {other:?}"),
            }
        }
    }

    #[test]
    fn writer_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let w = EventWriter::create(&path, &created()).unwrap();
        w.append(&answered(1, false)).unwrap();
        assert!(EventWriter::create(&path, &created()).is_err());
        let mut t = std::fs::read_to_string(&path).unwrap();
        t.push_str("{\"event\":\"ans");
        std::fs::write(&path, t).unwrap();
        let w = EventWriter::reopen(&path, true).unwrap();
        w.append(&answered(2, true)).unwrap();
        let log = parse_event_log(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(log.answers, vec![false, true]);
        let mut t = std::fs::read_to_string(&path).unwrap();
        t.pop();
        std::fs::write(&path, t).unwrap();
        let w = EventWriter::reopen(&path, false).unwrap();
        w.append(&answered(3, false)).unwrap();
        let log = parse_event_log(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(log.answers, vec![false, true, false]);
    }
}
