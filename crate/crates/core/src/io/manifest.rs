//! Frame manifests: one tab-separated record per line,
//! `id  depth  color  label  status`, with `-` for a missing optional path.
//! Paths are relative to the manifest's directory unless absolute.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: &str = "# id\tdepth\tcolor\tlabel\tstatus";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Auto,
    Accepted,
    Rejected,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Auto => "auto",
            Status::Accepted => "accepted",
            Status::Rejected => "rejected",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Status::Auto),
            "accepted" => Ok(Status::Accepted),
            "rejected" => Ok(Status::Rejected),
            other => Err(format!("unknown status `{other}` (expected auto, accepted or rejected)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub depth: PathBuf,
    pub color: Option<PathBuf>,
    pub label: Option<PathBuf>,
    pub status: Status,
}

impl FrameRecord {
    pub fn new(id: impl Into<String>, depth: impl Into<PathBuf>) -> Self {
        FrameRecord {
            id: id.into(),
            depth: depth.into(),
            color: None,
            label: None,
            status: Status::Auto,
        }
    }
}

/// Ids become URL path segments and TSV fields, so keep them plain.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b)) && id != "." && id != ".."
}

fn valid_path(p: &str) -> bool {
    !p.is_empty() && !p.chars().any(|c| c.is_control())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    records: Vec<FrameRecord>,
}

impl Manifest {
    pub fn new(records: Vec<FrameRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            if !valid_id(&r.id) {
                return Err(Error::Manifest {
                    line,
                    msg: format!("invalid frame id `{}`", r.id),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest {
                    line,
                    msg: format!("duplicate frame id `{}`", r.id),
                });
            }
            for p in [Some(&r.depth), r.color.as_ref(), r.label.as_ref()].into_iter().flatten() {
                let s = p.to_str().unwrap_or("");
                if !valid_path(s) || s == "-" {
                    return Err(Error::Manifest {
                        line,
                        msg: format!("unusable path {p:?}"),
                    });
                }
            }
        }
        Ok(Manifest { records })
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FrameRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FrameRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Sets the status of `id`; returns false for an unknown id.
    pub fn set_status(&mut self, id: &str, status: Status) -> bool {
        match self.records.iter_mut().find(|r| r.id == id) {
            Some(r) => {
                r.status = status;
                true
            }
            None => false,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::Manifest {
                    line,
                    msg: format!("expected 5 tab-separated fields, found {}", fields.len()),
                });
            }
            let opt = |s: &str| (s != "-").then(|| PathBuf::from(s));
            let status = fields[4].parse().map_err(|msg| Error::Manifest { line, msg })?;
            if fields[1] == "-" {
                return Err(Error::Manifest {
                    line,
                    msg: "depth path is required".into(),
                });
            }
            records.push(FrameRecord {
                id: fields[0].to_string(),
                depth: PathBuf::from(fields[1]),
                color: opt(fields[2]),
                label: opt(fields[3]),
                status,
            });
            lines.push(line);
        }
        // Re-run validation so errors carry the source line number.
        Manifest::new(records).map_err(|e| match e {
            Error::Manifest { line, msg } => Error::Manifest {
                line: lines[line - 1],
                msg,
            },
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        let show = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "-".to_string(), |p| p.display().to_string());
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.id,
                r.depth.display(),
                show(&r.color),
                show(&r.label),
                r.status
            ));
        }
        out
    }

    /// Parses the file and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Manifest::parse(&text).map_err(|e| e.in_file(path))?;
        let base = base_dir(path);
        for r in &m.records {
            for p in [Some(&r.depth), r.color.as_ref(), r.label.as_ref()].into_iter().flatten() {
                let full = base.join(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, format!("referenced by frame `{}`", r.id)),
                    ));
                }
            }
        }
        Ok(m)
    }

    /// Writes to a temporary file in the same directory, then renames it
    /// over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}

/// Directory that relative manifest paths resolve against.
pub fn base_dir(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Replaces `path` with `bytes` via write-temp-then-rename. The file gets
/// the permissions of the one it replaces, or 0644 when new.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = base_dir(path);
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    let perms = std::fs::metadata(path).map(|m| m.permissions()).unwrap_or_else(|_| {
        use std::os::unix::fs::PermissionsExt;
        std::fs::Permissions::from_mode(0o644)
    });
    #[cfg(unix)]
    builder.permissions(perms);
    let mut tmp = builder.tempfile_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
