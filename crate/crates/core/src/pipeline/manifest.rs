use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, write_atomic, ExperimentConfig};
use crate::backend::{ParticipantUsage, TrialRecord, TrialStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantStatus {
    Pending,
    Complete,
    /// Stopped early or left unsettled trials; a rerun continues it.
    Partial,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatusCounts {
    pub ok: usize,
    pub noncompliant: usize,
    pub content_filtered: usize,
    pub transport_error: usize,
    pub skipped: usize,
}

impl StatusCounts {
    pub fn from_records(records: &[TrialRecord]) -> Self {
        let mut c = StatusCounts::default();
        for r in records {
            match r.status {
                TrialStatus::Ok => c.ok += 1,
                TrialStatus::Noncompliant => c.noncompliant += 1,
                TrialStatus::ContentFiltered => c.content_filtered += 1,
                TrialStatus::TransportError => c.transport_error += 1,
                TrialStatus::Skipped => c.skipped += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.ok + self.noncompliant + self.content_filtered + self.transport_error + self.skipped
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantEntry {
    pub key: String,
    /// Paths are relative to the manifest's directory.
    pub transcript: String,
    pub dsm: Option<String>,
    pub status: ParticipantStatus,
    pub planned: usize,
    pub counts: StatusCounts,
    pub transcript_sha256: Option<String>,
    pub usage: Option<ParticipantUsage>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRun {
    pub temperature: f64,
    pub dir: String,
    pub group_dsm: Option<String>,
    pub participants: Vec<ParticipantEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// Directory the config's relative paths resolve against.
    pub config_dir: String,
    pub runs: Vec<TemperatureRun>,
    pub usage_total: ParticipantUsage,
    pub started_at: String,
    pub updated_at: String,
    /// SHA-256 over everything except the timestamps, this field and the
    /// output location.
    pub hash: String,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn new(config: ExperimentConfig, now: String) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_dir: config.base_dir().to_string_lossy().into_owned(),
            config,
            runs: Vec::new(),
            usage_total: ParticipantUsage::default(),
            started_at: now.clone(),
            updated_at: now,
            hash: String::new(),
        }
    }

    pub fn compute_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        if let Some(obj) = v.as_object_mut() {
            for k in ["started_at", "updated_at", "hash", "config_dir"] {
                obj.remove(k);
            }
            if let Some(cfg) = obj.get_mut("config").and_then(|c| c.as_object_mut()) {
                cfg.remove("output_dir");
            }
        }
        sha256_hex(v.to_string().as_bytes())
    }

    pub fn is_complete(&self) -> bool {
        self.runs
            .iter()
            .flat_map(|r| &r.participants)
            .all(|p| p.status == ParticipantStatus::Complete)
    }

    pub fn recompute_totals(&mut self) {
        let mut t = ParticipantUsage::default();
        let mut cost = Some(0.0);
        let mut any = false;
        for u in self.runs.iter().flat_map(|r| &r.participants).filter_map(|p| p.usage.as_ref()) {
            any = true;
            t.usage += u.usage;
            t.requests += u.requests;
            t.not_ok += u.not_ok;
            t.wall_ms += u.wall_ms;
            cost = cost.zip(u.cost).map(|(a, b)| a + b);
        }
        t.cost = cost.filter(|_| any);
        self.usage_total = t;
    }

    /// Refresh totals, timestamp and hash, then replace the file atomically.
    pub fn save(&mut self, dir: &Path, now: String) -> Result<()> {
        self.recompute_totals();
        self.updated_at = now;
        self.hash = self.compute_hash();
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&dir.join(Self::FILE_NAME), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: RunManifest = serde_json::from_str(&text)?;
        m.config = m.config.with_base_dir(m.config_dir.clone());
        let expected = m.compute_hash();
        if expected != m.hash {
            return Err(Error::Config(format!(
                "{}: hash mismatch (edited by hand?)",
                path.display()
            )));
        }
        Ok(m)
    }
}
