//! A deterministic stand-in for a chat model that rates from a latent DSM.
//!
//! For a rating trial on items (a, b) with latent distance `d`:
//!
//! ```text
//! s = 100·(1 − d) + offset + noise_scale·temperature·z
//! s = s + push·(t − s)        t = 0 if s < 50 else 100
//! reply = round(clamp(s, 0, 100))
//! ```
//!
//! `offset = persona_offset_scale · N(0,1)` is drawn once per identity from
//! `ChaCha8(derive_seed(identity.seed ^ seed, "persona"))`. Each trial draws,
//! in order, `u ~ U[0,1)` then `z ~ N(0,1)` from
//! `ChaCha8(derive_seed(identity.seed ^ seed, "trial:<index>"))`; `u <
//! noncompliance_rate` produces a refusal instead of a number.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, Usage};
use crate::cohort::{derive_seed, Identity, Payload};
use crate::corpus::StimulusSet;
use crate::dsm::{Dsm, Provenance};
use crate::error::{Error, Result};

const REFUSALS: [&str; 3] = [
    "As an AI, I don't have personal experiences, but these two are somewhat related.",
    "I cannot give a precise number here; it depends on the context in which they appear.",
    "Both items share some features, so I would place them somewhere in the middle of the scale.",
];

/// Deterministically reject trials that mention all of `items`, optionally
/// only for participants with the given surname.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRule {
    #[serde(default)]
    pub surname: Option<String>,
    pub items: Vec<String>,
}

impl FilterRule {
    fn matches(&self, identity: &Identity, item_ids: &[String]) -> bool {
        let who = match (&self.surname, &identity.surname) {
            (None, _) => true,
            (Some(want), Some(have)) => want.eq_ignore_ascii_case(have),
            (Some(_), None) => false,
        };
        who && !self.items.is_empty() && self.items.iter().all(|i| item_ids.contains(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRaterConfig {
    pub latent: Dsm,
    pub persona_offset_scale: f64,
    pub noise_scale: f64,
    pub noncompliance_rate: f64,
    pub bimodal_push: f64,
    pub filter_rules: Vec<FilterRule>,
    pub seed: u64,
}

impl SyntheticRaterConfig {
    pub fn new(latent: Dsm) -> Self {
        SyntheticRaterConfig {
            latent,
            persona_offset_scale: 0.0,
            noise_scale: 0.0,
            noncompliance_rate: 0.0,
            bimodal_push: 0.0,
            filter_rules: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.latent;
        if !d.is_complete() {
            return Err(Error::Config("synthetic latent DSM has missing cells".into()));
        }
        d.validate()?;
        if (0..d.n()).any(|i| d.get(i, i) != Some(0.0)) {
            return Err(Error::Config("synthetic latent DSM needs a zero diagonal".into()));
        }
        for (name, p) in [
            ("noncompliance_rate", self.noncompliance_rate),
            ("bimodal_push", self.bimodal_push),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        for (name, s) in [
            ("persona_offset_scale", self.persona_offset_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    cfg: SyntheticRaterConfig,
    model: String,
    index: HashMap<String, usize>,
}

impl SyntheticBackend {
    pub fn new(cfg: SyntheticRaterConfig) -> Result<Self> {
        cfg.validate()?;
        let index = cfg
            .latent
            .labels()
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Ok(SyntheticBackend {
            cfg,
            model: "synthetic".into(),
            index,
        })
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn config(&self) -> &SyntheticRaterConfig {
        &self.cfg
    }

    pub fn persona_offset(&self, identity: &Identity) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(identity.seed ^ self.cfg.seed, "persona"));
        let z: f64 = StandardNormal.sample(&mut rng);
        self.cfg.persona_offset_scale * z
    }

    fn distance(&self, a: &str, b: &str) -> std::result::Result<f64, BackendError> {
        let i = self.lookup(a)?;
        let j = self.lookup(b)?;
        Ok(self.cfg.latent.get(i, j).expect("validated complete"))
    }

    fn lookup(&self, id: &str) -> std::result::Result<usize, BackendError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| BackendError::Fatal(format!("item {id:?} not in the latent DSM")))
    }

    fn similarity(&self, d: f64, offset: f64, z: f64, temperature: f64) -> f64 {
        let mut s = 100.0 * (1.0 - d) + offset + self.cfg.noise_scale * temperature * z;
        let target = if s < 50.0 { 0.0 } else { 100.0 };
        s += self.cfg.bimodal_push * (target - s);
        s.clamp(0.0, 100.0).round()
    }

    fn reply_text(&self, request: &ChatRequest) -> std::result::Result<String, BackendError> {
        let meta = &request.meta;
        if self
            .cfg
            .filter_rules
            .iter()
            .any(|r| r.matches(&meta.identity, &meta.item_ids))
        {
            return Err(BackendError::ContentFiltered(format!(
                "synthetic filter rule for {}",
                meta.item_ids.join("/")
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            meta.identity.seed ^ self.cfg.seed,
            &format!("trial:{}", meta.trial_index),
        ));
        let u: f64 = rng.random();
        let z: f64 = StandardNormal.sample(&mut rng);
        let refuse = u < self.cfg.noncompliance_rate;
        let refusal = |rng: &mut ChaCha8Rng| REFUSALS[rng.random_range(0..REFUSALS.len())].to_string();

        match &meta.payload {
            Payload::Describe(img) => {
                if refuse {
                    return Ok(refusal(&mut rng));
                }
                let label = img.id.replace('_', " ");
                Ok(format!("The image shows a {label} in the center of the frame."))
            }
            Payload::Ranking { sentences, .. } => {
                if refuse {
                    return Ok(refusal(&mut rng));
                }
                let mut keyed: Vec<(f64, u64)> = sentences
                    .iter()
                    .map(|(id, _)| (rng.random::<f64>(), *id))
                    .collect();
                keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
                Ok(keyed
                    .iter()
                    .map(|(_, id)| id.to_string())
                    .collect::<Vec<_>>()
                    .join(", "))
            }
            _ => {
                let [a, b] = meta.item_ids.as_slice() else {
                    return Err(BackendError::Fatal(format!(
                        "rating trial needs two item ids, got {}",
                        meta.item_ids.len()
                    )));
                };
                let d = match &meta.payload {
                    // sentences are usually not part of the latent set
                    Payload::WordSentence { .. } => self.distance(a, b).unwrap_or(0.5),
                    _ => self.distance(a, b)?,
                };
                if refuse {
                    return Ok(refusal(&mut rng));
                }
                let offset = self.persona_offset(&meta.identity);
                let s = self.similarity(d, offset, z, request.temperature);
                Ok(format!("{}", s as i64))
            }
        }
    }
}

/// Rough token count: a quarter token per character plus per-message and
/// per-image overheads.
fn estimate_tokens(request: &ChatRequest) -> u64 {
    request
        .messages
        .iter()
        .map(|m| 4 + m.joined_text().chars().count().div_ceil(4) as u64 + 85 * m.image_count() as u64)
        .sum()
}

impl ChatBackend for SyntheticBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, request: &ChatRequest) -> std::result::Result<ChatReply, BackendError> {
        let text = self.reply_text(request)?;
        let prompt_tokens = estimate_tokens(request);
        let completion_tokens = text.chars().count().div_ceil(4) as u64;
        Ok(ChatReply {
            usage: Usage {
                prompt_tokens,
                completion_tokens,
            },
            // a function of the request only, so transcripts are reproducible
            latency_ms: 20 + prompt_tokens / 10,
            retries: 0,
            text,
        })
    }
}

/// Random Euclidean geometry in `dims` dimensions, scaled so the largest
/// distance is 1.
pub fn random_latent(labels: &[String], dims: usize, seed: u64) -> Dsm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = labels
        .iter()
        .map(|_| (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    from_points(labels, &points)
}

/// Category-clustered geometry: each category gets a centre drawn with
/// standard deviation `separation`, items scatter around it with unit spread.
pub fn clustered_latent(set: &StimulusSet, separation: f64, seed: u64) -> Dsm {
    const DIMS: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres: HashMap<String, Vec<f64>> = HashMap::new();
    let mut points = Vec::with_capacity(set.len());
    for item in set.items() {
        let centre = centres
            .entry(item.category.to_string())
            .or_insert_with(|| {
                (0..DIMS)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        separation * z
                    })
                    .collect()
            })
            .clone();
        points.push(
            centre
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + z
                })
                .collect::<Vec<f64>>(),
        );
    }
    from_points(&set.ids(), &points)
}

fn from_points(labels: &[String], points: &[Vec<f64>]) -> Dsm {
    let n = labels.len();
    let mut dense = vec![0.0; n * n];
    let mut max: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dense[i * n + j] = d;
            dense[j * n + i] = d;
            max = max.max(d);
        }
    }
    if max > 0.0 {
        dense.iter_mut().for_each(|v| *v /= max);
    }
    Dsm::from_dense(labels.to_vec(), &dense, Provenance::Rated).expect("finite symmetric distances")
}
