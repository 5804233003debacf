use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrialRecord, TrialStatus, Usage};
use crate::error::{Error, Result};

/// Price per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Price {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl Price {
    pub fn cost(&self, usage: Usage) -> f64 {
        usage.prompt_tokens as f64 / 1000.0 * self.prompt_per_1k
            + usage.completion_tokens as f64 / 1000.0 * self.completion_per_1k
    }
}

/// Model id to price, loaded from a JSON object.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, Price>);

impl PriceTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: PriceTable = serde_json::from_str(&text)?;
        for (model, p) in &table.0 {
            if !(p.prompt_per_1k >= 0.0 && p.completion_per_1k >= 0.0) {
                return Err(Error::Config(format!("negative price for {model}")));
            }
        }
        Ok(table)
    }

    pub fn get(&self, model: &str) -> Option<&Price> {
        self.0.get(model)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParticipantUsage {
    pub usage: Usage,
    pub requests: u64,
    pub not_ok: u64,
    pub wall_ms: u64,
    pub cost: Option<f64>,
}

/// Token, time and cost totals per participant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UsageLedger {
    pub participants: BTreeMap<String, ParticipantUsage>,
}

impl UsageLedger {
    /// Add one participant's records. Skipped trials made no request.
    pub fn add(&mut self, participant: &str, records: &[TrialRecord], price: Option<&Price>) {
        let entry = self.participants.entry(participant.to_string()).or_default();
        for r in records {
            if r.status != TrialStatus::Skipped {
                entry.requests += 1;
            }
            if r.status != TrialStatus::Ok {
                entry.not_ok += 1;
            }
            entry.usage += r.usage;
            entry.wall_ms += r.latency_ms;
        }
        entry.cost = price.map(|p| p.cost(entry.usage));
    }

    pub fn merge(&mut self, other: UsageLedger) {
        self.participants.extend(other.participants);
    }

    pub fn total(&self) -> ParticipantUsage {
        let mut t = ParticipantUsage::default();
        let mut cost = Some(0.0);
        for p in self.participants.values() {
            t.usage += p.usage;
            t.requests += p.requests;
            t.not_ok += p.not_ok;
            t.wall_ms += p.wall_ms;
            cost = match (cost, p.cost) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
        }
        t.cost = cost.filter(|_| !self.participants.is_empty());
        t
    }

    /// Mean cost per participant, when prices were known.
    pub fn mean_cost(&self) -> Option<f64> {
        let n = self.participants.len();
        self.total().cost.map(|c| c / n as f64)
    }
}
