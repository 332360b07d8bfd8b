//! Append-only decision log and the pure replay that derives statuses from it.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use handseg::io::{Manifest, Status};
use serde::{Deserialize, Serialize};

use crate::error::{ReviewError, Result};

pub const DECISIONS_FILE: &str = "decisions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn status(self) -> Status {
        match self {
            Verdict::Accept => Status::Accepted,
            Verdict::Reject => Status::Rejected,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
        })
    }
}

impl FromStr for Verdict {
    type Err = ReviewError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accept" => Ok(Verdict::Accept),
            "reject" => Ok(Verdict::Reject),
            other => Err(ReviewError::BadVerdict(other.to_string())),
        }
    }
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decision {
    pub id: String,
    pub verdict: Verdict,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    #[serde(default)]
    pub reviewer: String,
}

impl Decision {
    pub fn now(id: impl Into<String>, verdict: Verdict, reviewer: impl Into<String>) -> Self {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Decision {
            id: id.into(),
            verdict,
            timestamp_ms,
            reviewer: reviewer.into(),
        }
    }
}

pub fn parse_log(text: &str) -> Result<Vec<Decision>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: Decision = serde_json::from_str(line).map_err(|e| ReviewError::Log {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(d);
    }
    Ok(out)
}

/// Reads the log at `path`; a missing file is an empty log. A final line
/// without its newline is a write cut short by a crash and is ignored.
pub fn read_log(path: &Path) -> Result<Vec<Decision>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ReviewError::io(path, e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    parse_log(complete)
}

/// Applies `decisions` in order on top of `manifest`; the latest verdict
/// per frame wins. Decisions for unknown frames are skipped.
pub fn replay(manifest: &Manifest, decisions: &[Decision]) -> Manifest {
    let mut out = manifest.clone();
    for d in decisions {
        out.set_status(&d.id, d.verdict.status());
    }
    out
}

/// Number of decisions per frame id.
pub fn history_lengths(decisions: &[Decision]) -> HashMap<String, usize> {
    let mut h = HashMap::new();
    for d in decisions {
        *h.entry(d.id.clone()).or_insert(0) += 1;
    }
    h
}

/// Single writer for the log file. Every append is synced before it
/// returns.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ReviewError::io(&path, e))?;
        Ok(DecisionLog { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, d: &Decision) -> Result<()> {
        let mut line = serde_json::to_string(d).expect("decision serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| ReviewError::io(&self.path, e))
    }
}
