//! Dataset directory state: the manifest as written by annotation plus the
//! decision log replayed on top of it.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use handseg::io::{base_dir, FrameRecord, Manifest, Status, MANIFEST_FILE};
use serde::{Deserialize, Serialize};

use crate::decisions::{read_log, replay, Decision, DecisionLog, Verdict, DECISIONS_FILE};
use crate::error::{ReviewError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub pending: usize,
    pub decided: usize,
    /// `accepted / decided`; absent until something is decided.
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub id: String,
    pub status: Status,
    pub has_color: bool,
    pub has_label: bool,
    /// Number of recorded decisions for this frame.
    pub history: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    /// Frames matching the filter, before paging.
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub frames: Vec<FrameSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Depth,
    Color,
    Label,
}

impl ImageKind {
    pub fn from_file_name(name: &str) -> Option<Self> {
        match name {
            "depth.png" => Some(ImageKind::Depth),
            "color.png" => Some(ImageKind::Color),
            "label.png" => Some(ImageKind::Label),
            _ => None,
        }
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn decisions_path(dir: &Path) -> PathBuf {
    dir.join(DECISIONS_FILE)
}

/// Current statuses of a dataset directory without opening the log for
/// writing.
pub fn load_view(dir: &Path) -> Result<(Manifest, Vec<Decision>)> {
    let base = Manifest::load(manifest_path(dir))?;
    let decisions = read_log(&decisions_path(dir))?;
    Ok((replay(&base, &decisions), decisions))
}

#[derive(Debug)]
pub struct ReviewStore {
    dir: PathBuf,
    current: Manifest,
    index: HashMap<String, usize>,
    history: Vec<usize>,
    last: Vec<Option<Verdict>>,
    log: DecisionLog,
}

impl ReviewStore {
    /// Fails when the directory has no loadable manifest.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let (current, decisions) = load_view(&dir)?;
        let index: HashMap<String, usize> = current
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        let mut history = vec![0; current.len()];
        let mut last = vec![None; current.len()];
        for d in &decisions {
            if let Some(&i) = index.get(&d.id) {
                history[i] += 1;
                last[i] = Some(d.verdict);
            } else {
                log::warn!("decision log names unknown frame `{}`; ignored", d.id);
            }
        }
        let log = DecisionLog::open(decisions_path(&dir))?;
        Ok(ReviewStore {
            dir,
            current,
            index,
            history,
            last,
            log,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.current
    }

    fn position(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| ReviewError::UnknownFrame(id.to_string()))
    }

    /// Appends and syncs the decision, then updates the derived status. A
    /// verdict equal to the frame's latest one is not logged again.
    pub fn record(&mut self, id: &str, verdict: Verdict, reviewer: &str) -> Result<FrameSummary> {
        let i = self.position(id)?;
        if self.last[i] != Some(verdict) {
            self.log.append(&Decision::now(id, verdict, reviewer))?;
            self.current.set_status(id, verdict.status());
            self.history[i] += 1;
            self.last[i] = Some(verdict);
        }
        Ok(self.summary(i))
    }

    fn summary(&self, i: usize) -> FrameSummary {
        let r = &self.current.records()[i];
        FrameSummary {
            id: r.id.clone(),
            status: r.status,
            has_color: r.color.is_some(),
            has_label: r.label.is_some(),
            history: self.history[i],
        }
    }

    pub fn frame(&self, id: &str) -> Result<FrameSummary> {
        Ok(self.summary(self.position(id)?))
    }

    pub fn frames(&self, offset: usize, limit: usize, status: Option<Status>) -> Page {
        let matching: Vec<usize> = (0..self.current.len())
            .filter(|&i| status.is_none_or(|s| self.current.records()[i].status == s))
            .collect();
        Page {
            total: matching.len(),
            offset,
            limit,
            frames: matching.iter().skip(offset).take(limit).map(|&i| self.summary(i)).collect(),
        }
    }

    pub fn stats(&self) -> Stats {
        stats_of(&self.current)
    }

    /// Resolved file for one of the frame's images, `None` when the
    /// manifest has no such image.
    pub fn image_path(&self, id: &str, kind: ImageKind) -> Result<Option<PathBuf>> {
        let r = &self.current.records()[self.position(id)?];
        let rel = match kind {
            ImageKind::Depth => Some(&r.depth),
            ImageKind::Color => r.color.as_ref(),
            ImageKind::Label => r.label.as_ref(),
        };
        Ok(rel.map(|p| self.dir.join(p)))
    }
}

pub fn stats_of(m: &Manifest) -> Stats {
    let count = |s: Status| m.records().iter().filter(|r| r.status == s).count();
    let (accepted, rejected) = (count(Status::Accepted), count(Status::Rejected));
    let decided = accepted + rejected;
    Stats {
        total: m.len(),
        accepted,
        rejected,
        pending: m.len() - decided,
        decided,
        acceptance_rate: (decided > 0).then(|| accepted as f64 / decided as f64),
    }
}

/// Writes the frames whose latest verdict is accept, in manifest order, to
/// `out`. Relative image paths are rewritten when `out` lives in another
/// directory.
pub fn export_accepted(dataset_dir: &Path, out: &Path) -> Result<Manifest> {
    let (current, _) = load_view(dataset_dir)?;
    let same_dir = std::fs::canonicalize(base_dir(out)).ok() == std::fs::canonicalize(dataset_dir).ok();
    let rebase = |p: &PathBuf| if same_dir || p.is_absolute() { p.clone() } else { dataset_dir.join(p) };
    let records: Vec<FrameRecord> = current
        .records()
        .iter()
        .filter(|r| r.status == Status::Accepted)
        .map(|r| FrameRecord {
            id: r.id.clone(),
            depth: rebase(&r.depth),
            color: r.color.as_ref().map(rebase),
            label: r.label.as_ref().map(rebase),
            status: r.status,
        })
        .collect();
    let m = Manifest::new(records)?;
    m.save(out)?;
    Ok(m)
}
