//! Simulated participants and the prompt protocols they are run through.
//!
//! Templates mark the identity clause with square brackets, e.g.
//! `"[{honorific} {surname},] please rate ..."`. With a named identity the
//! brackets are dropped and the placeholders filled; for anonymous runs the
//! whole clause is removed, the next word is capitalized when the clause
//! opened a sentence, and doubled spaces are collapsed.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Surnames used for named cohorts.
pub const DEFAULT_SURNAMES: [&str; 8] = [
    "Snyder",
    "Smalls",
    "Rodriguez",
    "Olson",
    "Nguyen",
    "Kim",
    "Jeanbaptiste",
    "Garcia",
];

pub const DEFAULT_HONORIFICS: [Honorific; 3] = [Honorific::Ms, Honorific::Mr, Honorific::Dr];

/// Stable 64-bit seed derived from a base seed and a string key.
pub fn derive_seed(base_seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Honorific {
    #[serde(rename = "Ms.")]
    Ms,
    #[serde(rename = "Mr.")]
    Mr,
    #[serde(rename = "Dr.")]
    Dr,
}

impl Honorific {
    fn stem(self) -> &'static str {
        match self {
            Honorific::Ms => "Ms",
            Honorific::Mr => "Mr",
            Honorific::Dr => "Dr",
        }
    }
}

impl fmt::Display for Honorific {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.", self.stem())
    }
}

impl FromStr for Honorific {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_end_matches('.').to_ascii_lowercase().as_str() {
            "ms" => Ok(Honorific::Ms),
            "mr" => Ok(Honorific::Mr),
            "dr" => Ok(Honorific::Dr),
            _ => Err(Error::Prompt(format!("unknown honorific {s:?}"))),
        }
    }
}

/// A simulated participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub honorific: Option<Honorific>,
    pub surname: Option<String>,
    /// `Ms_Olson` for named identities, `anon_03` for anonymous repeats.
    pub key: String,
    /// Derived from the run's base seed and `key`.
    pub seed: u64,
}

impl Identity {
    pub fn named(honorific: Honorific, surname: &str, base_seed: u64) -> Self {
        let key = format!("{}_{}", honorific.stem(), surname);
        Identity {
            honorific: Some(honorific),
            surname: Some(surname.to_string()),
            seed: derive_seed(base_seed, &key),
            key,
        }
    }

    pub fn anonymous(index: usize, base_seed: u64) -> Self {
        let key = format!("anon_{:02}", index + 1);
        Identity {
            honorific: None,
            surname: None,
            seed: derive_seed(base_seed, &key),
            key,
        }
    }

    pub fn is_anonymous(&self) -> bool {
        self.surname.is_none()
    }

    /// "Ms. Garcia", or `None` for anonymous identities.
    pub fn display_name(&self) -> Option<String> {
        match (&self.honorific, &self.surname) {
            (Some(h), Some(s)) => Some(format!("{h} {s}")),
            _ => None,
        }
    }
}

/// Build a cohort from name lists, or from a count of anonymous repeats.
///
/// Named cohorts are the full surname × honorific product, surnames outer.
pub fn build_cohort(
    surnames: &[String],
    honorifics: &[Honorific],
    anonymous_repeats: Option<usize>,
    base_seed: u64,
) -> Result<Vec<Identity>> {
    let named = !surnames.is_empty() || !honorifics.is_empty();
    match (named, anonymous_repeats) {
        (true, Some(_)) => Err(Error::Config(
            "give either surnames/honorifics or anonymous repeats, not both".into(),
        )),
        (false, None) | (false, Some(0)) => Err(Error::Config("cohort is empty".into())),
        (false, Some(n)) => Ok((0..n).map(|i| Identity::anonymous(i, base_seed)).collect()),
        (true, None) => {
            if surnames.is_empty() || honorifics.is_empty() {
                return Err(Error::Config(
                    "cohort is empty: need at least one surname and one honorific".into(),
                ));
            }
            let mut out = Vec::with_capacity(surnames.len() * honorifics.len());
            for s in surnames {
                for &h in honorifics {
                    let id = Identity::named(h, s, base_seed);
                    if out.iter().any(|o: &Identity| o.key == id.key) {
                        return Err(Error::Config(format!("duplicate participant {}", id.key)));
                    }
                    out.push(id);
                }
            }
            Ok(out)
        }
    }
}

/// Deterministic per-participant trial order.
pub fn shuffle_trials<T: Clone>(items: &[T], identity: &Identity) -> Vec<T> {
    let mut out = items.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(identity.seed);
    out.shuffle(&mut rng);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    WordWord,
    ImageImage,
    ImageDescription,
    WordSentenceRating,
    SentenceRanking,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::WordWord,
        TaskKind::ImageImage,
        TaskKind::ImageDescription,
        TaskKind::WordSentenceRating,
        TaskKind::SentenceRanking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::WordWord => "word_word",
            TaskKind::ImageImage => "image_image",
            TaskKind::ImageDescription => "image_description",
            TaskKind::WordSentenceRating => "word_sentence_rating",
            TaskKind::SentenceRanking => "sentence_ranking",
        }
    }

    /// Tasks whose ratings fill an item × item matrix.
    pub fn is_pairwise(self) -> bool {
        matches!(
            self,
            TaskKind::WordWord | TaskKind::ImageImage | TaskKind::ImageDescription
        )
    }

    pub fn uses_images(self) -> bool {
        matches!(self, TaskKind::ImageImage | TaskKind::ImageDescription)
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

/// An image referenced by a trial; encoded by the backend at send time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub path: PathBuf,
}

/// What one trial asks about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    WordPair(String, String),
    ImagePair(ImageRef, ImageRef),
    Describe(ImageRef),
    DescriptionPair(String, String),
    WordSentence { sentence: String, word: String },
    Ranking { word: String, sentences: Vec<(u64, String)> },
}

/// A rendered user message: text plus images to attach after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedMessage {
    pub text: String,
    pub images: Vec<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub intro_text: String,
    pub trial_text: String,
    /// Only used by the image-description task.
    #[serde(default)]
    pub description_text: Option<String>,
}

impl PromptTemplate {
    pub fn default_for(task: TaskKind) -> Self {
        let t = |s: &str| s.trim_end().to_string();
        match task {
            TaskKind::WordWord => PromptTemplate {
                intro_text: t(include_str!("../templates/word_word.intro.txt")),
                trial_text: t(include_str!("../templates/word_word.trial.txt")),
                description_text: None,
            },
            TaskKind::ImageImage => PromptTemplate {
                intro_text: t(include_str!("../templates/image_image.intro.txt")),
                trial_text: t(include_str!("../templates/image_image.trial.txt")),
                description_text: None,
            },
            TaskKind::ImageDescription => PromptTemplate {
                intro_text: t(include_str!("../templates/image_description.intro.txt")),
                trial_text: t(include_str!("../templates/image_description.trial.txt")),
                description_text: Some(t(include_str!(
                    "../templates/image_description.describe.txt"
                ))),
            },
            TaskKind::WordSentenceRating => PromptTemplate {
                intro_text: t(include_str!("../templates/word_sentence_rating.intro.txt")),
                trial_text: t(include_str!("../templates/word_sentence_rating.trial.txt")),
                description_text: None,
            },
            TaskKind::SentenceRanking => PromptTemplate {
                intro_text: t(include_str!("../templates/sentence_ranking.intro.txt")),
                trial_text: t(include_str!("../templates/sentence_ranking.trial.txt")),
                description_text: None,
            },
        }
    }

    pub fn render_intro(&self, identity: &Identity) -> String {
        self.render_intro_with(identity, &[])
    }

    /// Intro with extra placeholder values, e.g. `("count", "31")`.
    pub fn render_intro_with(&self, identity: &Identity, vars: &[(&str, &str)]) -> String {
        fill(&apply_identity(&self.intro_text, identity), vars)
    }

    pub fn render_trial(
        &self,
        task: TaskKind,
        identity: &Identity,
        payload: &Payload,
    ) -> Result<RenderedMessage> {
        let mismatch = || {
            Error::Prompt(format!(
                "payload {} does not fit task {}",
                payload_kind(payload),
                task.name()
            ))
        };
        let (template, vars, images): (&str, Vec<(&str, String)>, Vec<ImageRef>) =
            match (task, payload) {
                (TaskKind::WordWord, Payload::WordPair(a, b)) => (
                    &self.trial_text,
                    vec![("wordA", a.clone()), ("wordB", b.clone())],
                    vec![],
                ),
                (TaskKind::ImageImage, Payload::ImagePair(a, b)) => {
                    (&self.trial_text, vec![], vec![a.clone(), b.clone()])
                }
                (TaskKind::ImageDescription, Payload::Describe(img)) => {
                    let text = self
                        .description_text
                        .as_deref()
                        .ok_or_else(|| Error::Prompt("template has no description prompt".into()))?;
                    (text, vec![], vec![img.clone()])
                }
                (TaskKind::ImageDescription, Payload::DescriptionPair(a, b)) => (
                    &self.trial_text,
                    vec![("descriptionA", a.clone()), ("descriptionB", b.clone())],
                    vec![],
                ),
                (TaskKind::WordSentenceRating, Payload::WordSentence { sentence, word }) => (
                    &self.trial_text,
                    vec![("sentence", sentence.clone()), ("word", word.clone())],
                    vec![],
                ),
                (TaskKind::SentenceRanking, Payload::Ranking { word, sentences }) => {
                    let block = sentences
                        .iter()
                        .map(|(id, s)| format!("Sentence ID number {id}: {s}"))
                        .collect::<Vec<_>>()
                        .join("\n");
                    (
                        &self.trial_text,
                        vec![
                            ("word", word.clone()),
                            ("count", sentences.len().to_string()),
                            ("sentence_block", block),
                        ],
                        vec![],
                    )
                }
                _ => return Err(mismatch()),
            };
        let vars: Vec<(&str, &str)> = vars.iter().map(|(k, v)| (*k, v.as_str())).collect();
        Ok(RenderedMessage {
            text: fill(&apply_identity(template, identity), &vars),
            images,
        })
    }
}

fn payload_kind(p: &Payload) -> &'static str {
    match p {
        Payload::WordPair(..) => "word pair",
        Payload::ImagePair(..) => "image pair",
        Payload::Describe(..) => "single image",
        Payload::DescriptionPair(..) => "description pair",
        Payload::WordSentence { .. } => "word/sentence",
        Payload::Ranking { .. } => "ranking set",
    }
}

/// Intro text for `task` using the shipped template.
pub fn render_intro(task: TaskKind, identity: &Identity) -> String {
    PromptTemplate::default_for(task).render_intro(identity)
}

/// Trial message for `task` using the shipped template.
pub fn render_trial(task: TaskKind, identity: &Identity, payload: &Payload) -> Result<RenderedMessage> {
    PromptTemplate::default_for(task).render_trial(task, identity, payload)
}

/// Resolve bracketed identity clauses and `{honorific}`/`{surname}` placeholders.
fn apply_identity(template: &str, identity: &Identity) -> String {
    let honorific = identity.honorific.map(|h| h.to_string()).unwrap_or_default();
    let surname = identity.surname.clone().unwrap_or_default();
    let mut out = String::with_capacity(template.len());
    let mut capitalize_next = false;
    let mut rest = template;
    while let Some(open) = rest.find('[') {
        let Some(close_rel) = rest[open..].find(']') else {
            break;
        };
        let close = open + close_rel;
        out.push_str(&rest[..open]);
        let clause = &rest[open + 1..close];
        if identity.is_anonymous() {
            capitalize_next = starts_sentence(&out);
        } else {
            out.push_str(clause);
        }
        rest = &rest[close + 1..];
        if capitalize_next {
            let trimmed = rest.trim_start_matches(' ');
            let lead = rest.len() - trimmed.len();
            out.push_str(&rest[..lead]);
            let mut chars = trimmed.chars();
            if let Some(c) = chars.next() {
                out.extend(c.to_uppercase());
                rest = chars.as_str();
            } else {
                rest = trimmed;
            }
            capitalize_next = false;
        }
    }
    out.push_str(rest);
    let out = out
        .replace("{honorific}", &honorific)
        .replace("{surname}", &surname);
    if identity.is_anonymous() {
        normalize_spaces(&out)
    } else {
        out
    }
}

fn starts_sentence(before: &str) -> bool {
    match before.trim_end_matches(' ').chars().last() {
        None => true,
        Some(c) => matches!(c, '.' | '!' | '?' | '\n'),
    }
}

fn normalize_spaces(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for line in s.split('\n') {
        if !out.is_empty() || s.starts_with('\n') {
            out.push('\n');
        }
        let mut prev_space = false;
        let trimmed = line.trim_start_matches(' ');
        for c in trimmed.chars() {
            if c == ' ' {
                if !prev_space {
                    out.push(c);
                }
                prev_space = true;
            } else {
                if prev_space && matches!(c, ',' | '.') {
                    out.pop();
                }
                out.push(c);
                prev_space = false;
            }
        }
    }
    out
}

fn fill(text: &str, vars: &[(&str, &str)]) -> String {
    // single pass so substituted values are never re-scanned for placeholders
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
