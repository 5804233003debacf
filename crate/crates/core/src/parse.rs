//! Reply classification: ratings, descriptions and rankings.
//!
//! Rating extraction grammar:
//!
//! 1. trim the reply;
//! 2. if the whole remainder is one number in `[0, 100]` it is *strict*;
//! 3. a refusal marker anywhere makes it *noncompliant*;
//! 4. scale boilerplate (`out of 100`, `on a scale`, `/100`, `0 to 100`) is
//!    deleted, then the remaining standalone numbers are collected;
//! 5. exactly one distinct in-range value is *recovered*; anything else is
//!    *noncompliant*. Out-of-range values are never clamped.

use std::collections::{BTreeSet, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

pub const DEFAULT_REFUSAL_MARKERS: [&str; 3] = ["as an ai", "i cannot", "content filter"];

const SCALE_BOILERPLATE: [&str; 4] = ["out of 100", "on a scale", "/100", "0 to 100"];

static STRICT_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\d+(?:\.\d+)?$").expect("valid regex"));
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"));
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Rating,
    Description,
    Ranking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compliance {
    Strict,
    Recovered,
    Noncompliant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedReply {
    pub kind: ReplyKind,
    pub rating: Option<f64>,
    pub description: Option<String>,
    pub ranking: Option<Vec<u64>>,
    pub compliance: Compliance,
    pub reason: Option<String>,
    /// Expected ranking ids the reply left out.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<u64>,
}

impl ParsedReply {
    fn noncompliant(kind: ReplyKind, reason: impl Into<String>) -> Self {
        ParsedReply {
            kind,
            rating: None,
            description: None,
            ranking: None,
            compliance: Compliance::Noncompliant,
            reason: Some(reason.into()),
            missing: Vec::new(),
        }
    }

    fn rating(value: f64, compliance: Compliance) -> Self {
        ParsedReply {
            kind: ReplyKind::Rating,
            rating: Some(value),
            description: None,
            ranking: None,
            compliance,
            reason: None,
            missing: Vec::new(),
        }
    }

    pub fn is_compliant(&self) -> bool {
        self.compliance != Compliance::Noncompliant
    }
}

/// Parser settings; only the refusal markers are configurable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyParser {
    pub refusal_markers: Vec<String>,
}

impl Default for ReplyParser {
    fn default() -> Self {
        ReplyParser {
            refusal_markers: DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ReplyParser {
    fn refusal(&self, text: &str) -> Option<&str> {
        let lower = text.to_lowercase();
        self.refusal_markers
            .iter()
            .find(|m| lower.contains(&m.to_lowercase()))
            .map(String::as_str)
    }

    pub fn extract_rating(&self, text: &str) -> ParsedReply {
        let trimmed = text.trim();
        if STRICT_NUMBER.is_match(trimmed) {
            return match trimmed.parse::<f64>() {
                Ok(v) if (0.0..=100.0).contains(&v) => ParsedReply::rating(v, Compliance::Strict),
                _ => ParsedReply::noncompliant(ReplyKind::Rating, format!("out of range: {trimmed}")),
            };
        }
        if let Some(marker) = self.refusal(trimmed) {
            return ParsedReply::noncompliant(ReplyKind::Rating, format!("refusal ({marker})"));
        }
        let mut cleaned = trimmed.to_lowercase();
        for b in SCALE_BOILERPLATE {
            cleaned = cleaned.replace(b, " ");
        }
        let numbers = standalone_numbers(&cleaned);
        if numbers.is_empty() {
            return ParsedReply::noncompliant(ReplyKind::Rating, "no number");
        }
        let in_range: BTreeSet<u64> = numbers
            .iter()
            .filter(|v| (0.0..=100.0).contains(*v))
            .map(|v| v.to_bits())
            .collect();
        match in_range.len() {
            1 => {
                let v = f64::from_bits(*in_range.iter().next().expect("one element"));
                ParsedReply::rating(v, Compliance::Recovered)
            }
            0 => ParsedReply::noncompliant(ReplyKind::Rating, "out of range"),
            n => ParsedReply::noncompliant(ReplyKind::Rating, format!("ambiguous: {n} candidate numbers")),
        }
    }

    pub fn extract_description(&self, text: &str) -> ParsedReply {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return ParsedReply::noncompliant(ReplyKind::Description, "empty");
        }
        if let Some(marker) = self.refusal(trimmed) {
            return ParsedReply::noncompliant(ReplyKind::Description, format!("refusal ({marker})"));
        }
        ParsedReply {
            kind: ReplyKind::Description,
            rating: None,
            description: Some(trimmed.to_string()),
            ranking: None,
            compliance: Compliance::Strict,
            reason: None,
            missing: Vec::new(),
        }
    }

    pub fn extract_ranking(&self, text: &str, expected_ids: &HashSet<u64>) -> ParsedReply {
        let ids: Vec<u64> = INTEGER
            .find_iter(text)
            .filter_map(|m| m.as_str().parse().ok())
            .collect();
        if ids.is_empty() {
            let reason = match self.refusal(text) {
                Some(marker) => format!("refusal ({marker})"),
                None => "no ids".to_string(),
            };
            return ParsedReply::noncompliant(ReplyKind::Ranking, reason);
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(*id) {
                return ParsedReply::noncompliant(ReplyKind::Ranking, format!("duplicate id {id}"));
            }
            if !expected_ids.contains(id) {
                return ParsedReply::noncompliant(ReplyKind::Ranking, format!("unexpected id {id}"));
            }
        }
        let mut missing: Vec<u64> = expected_ids.difference(&seen).copied().collect();
        missing.sort_unstable();
        let (compliance, reason) = if missing.is_empty() {
            (Compliance::Strict, None)
        } else {
            let list: Vec<String> = missing.iter().map(u64::to_string).collect();
            (Compliance::Recovered, Some(format!("missing ids: {}", list.join(", "))))
        };
        ParsedReply {
            kind: ReplyKind::Ranking,
            rating: None,
            description: None,
            ranking: Some(ids),
            compliance,
            reason,
            missing,
        }
    }
}

pub fn extract_rating(text: &str) -> ParsedReply {
    ReplyParser::default().extract_rating(text)
}

pub fn extract_description(text: &str) -> ParsedReply {
    ReplyParser::default().extract_description(text)
}

pub fn extract_ranking(text: &str, expected_ids: &HashSet<u64>) -> ParsedReply {
    ReplyParser::default().extract_ranking(text, expected_ids)
}

/// Numbers not glued to letters or digits ("GPT-4o", "3rd" are skipped).
/// A leading minus makes the value negative.
fn standalone_numbers(text: &str) -> Vec<f64> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for m in NUMBER.find_iter(text) {
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        if before.is_some_and(|c| c.is_alphanumeric() || c == '_') {
            continue;
        }
        if after.is_some_and(|c| c.is_alphanumeric() || c == '_') {
            continue;
        }
        let Ok(mut v) = m.as_str().parse::<f64>() else {
            continue;
        };
        if m.start() > 0 && bytes[m.start() - 1] == b'-' {
            let glued = text[..m.start() - 1]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_alphanumeric());
            if glued {
                // "GPT-4" style identifiers, and ranges like "70-80"
                if !text[..m.start() - 1].ends_with(|c: char| c.is_ascii_digit()) {
                    continue;
                }
            } else {
                v = -v;
            }
        }
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_one_replies() {
        let r = extract_rating("0");
        assert_eq!((r.rating, r.compliance), (Some(0.0), Compliance::Strict));
        let r = extract_rating("100");
        assert_eq!((r.rating, r.compliance), (Some(100.0), Compliance::Strict));
        let r = extract_rating(" 40\n");
        assert_eq!((r.rating, r.compliance), (Some(40.0), Compliance::Strict));
    }

    #[test]
    fn recovered_and_rejected() {
        let r = extract_rating("I'd rate this 75 out of 100.");
        assert_eq!((r.rating, r.compliance), (Some(75.0), Compliance::Recovered));
        let r = extract_rating("As an AI, I cannot participate");
        assert_eq!(r.compliance, Compliance::Noncompliant);
        assert!(r.reason.unwrap().contains("refusal"));
        assert_eq!(extract_rating("150").compliance, Compliance::Noncompliant);
        assert_eq!(extract_rating("-5").compliance, Compliance::Noncompliant);
        assert_eq!(extract_rating("somewhere between 60 and 70").compliance, Compliance::Noncompliant);
        assert_eq!(extract_rating("No idea.").compliance, Compliance::Noncompliant);
        let r = extract_rating("On a scale from 0 to 100, I would say 35.");
        assert_eq!((r.rating, r.compliance), (Some(35.0), Compliance::Recovered));
        let r = extract_rating("Rating: 20/100");
        assert_eq!(r.rating, Some(20.0));
        let r = extract_rating("GPT-4o says 55");
        assert_eq!(r.rating, Some(55.0));
    }

    #[test]
    fn descriptions() {
        let text = "The image shows one human hand with five fingers, including a thumb, slightly spread apart.";
        let r = extract_description(&format!("  {text}\n"));
        assert_eq!(r.description.as_deref(), Some(text));
        assert_eq!(extract_description("").compliance, Compliance::Noncompliant);
        assert_eq!(
            extract_description("I cannot describe this image.").compliance,
            Compliance::Noncompliant
        );
    }

    #[test]
    fn rankings() {
        let expected: HashSet<u64> = [1, 2, 3].into_iter().collect();
        let r = extract_ranking("3, 1, 2", &expected);
        assert_eq!(r.compliance, Compliance::Strict);
        assert_eq!(r.ranking, Some(vec![3, 1, 2]));
        let r = extract_ranking("3 1", &expected);
        assert_eq!(r.compliance, Compliance::Recovered);
        assert_eq!(r.reason.as_deref(), Some("missing ids: 2"));
        assert_eq!(extract_ranking("1, 1, 2", &expected).compliance, Compliance::Noncompliant);
        assert_eq!(extract_ranking("1, 4", &expected).compliance, Compliance::Noncompliant);
        assert_eq!(extract_ranking("none", &expected).compliance, Compliance::Noncompliant);
    }
}
