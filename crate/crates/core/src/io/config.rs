//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! lower-case identifiers (`a-z`, `0-9`, `_`, `-`); values are the rest of
//! the line, trimmed. Repeating a key is an error.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

/// Entries in file order.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: "expected `key = value`".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !valid_key(k) {
            return Err(Error::Config {
                line,
                msg: format!("invalid key `{k}`"),
            });
        }
        if !seen.insert(k.to_string()) {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key `{k}`"),
            });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| e.in_file(path))
}
