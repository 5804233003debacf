//! Trial planning, participant sessions and JSONL transcripts.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::ops::AddAssign;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{encode_image, BackendError, ChatBackend, ChatMessage, ChatRequest, RequestMeta};
use crate::cohort::{shuffle_trials, Identity, ImageRef, Payload, PromptTemplate, TaskKind};
use crate::corpus::{enumerate_pairs, PairMode, StimulusSet};
use crate::error::{Error, Result};
use crate::parse::{Compliance, ReplyKind, ReplyParser};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Noncompliant,
    ContentFiltered,
    TransportError,
    /// Not sent, e.g. a description it depends on is missing.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

/// One line of a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant: String,
    pub trial_index: usize,
    pub task: TaskKind,
    pub kind: ReplyKind,
    pub item_ids: Vec<String>,
    /// SHA-256 of the request body.
    pub request_digest: String,
    pub reply: Option<String>,
    pub status: TrialStatus,
    pub compliance: Option<Compliance>,
    pub reason: Option<String>,
    pub rating: Option<f64>,
    pub description: Option<String>,
    pub ranking: Option<Vec<u64>>,
    pub latency_ms: u64,
    pub retries: u32,
    pub usage: Usage,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    /// Whether a rerun should leave this trial alone.
    fn is_settled(&self) -> bool {
        self.status != TrialStatus::TransportError
    }
}

/// A trial whose payload may depend on earlier replies.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialInput {
    Ready(Payload),
    /// Rate two images by the descriptions this participant gave earlier.
    DescribedPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub kind: ReplyKind,
    pub item_ids: Vec<String>,
    pub input: TrialInput,
}

/// A word with the sentences to rate or rank against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceItem {
    pub word: String,
    pub sentences: Vec<(u64, String)>,
}

fn image_ref(set: &StimulusSet, idx: usize, dataset: &str, root: Option<&Path>) -> Result<ImageRef> {
    let item = &set.items()[idx];
    let rel = item
        .image(dataset)
        .ok_or_else(|| Error::Corpus(format!("{} has no {dataset:?} image", item.id)))?;
    Ok(ImageRef {
        id: item.id.clone(),
        path: root.map(|r| r.join(rel)).unwrap_or_else(|| rel.to_path_buf()),
    })
}

/// Shuffled trial list for a pairwise task. Image tasks use the items that
/// have an image in `dataset`; the description task puts one description per
/// image first, then the pair ratings.
pub fn plan_trials(
    task: TaskKind,
    set: &StimulusSet,
    mode: PairMode,
    dataset: Option<&str>,
    image_root: Option<&Path>,
    identity: &Identity,
) -> Result<Vec<Trial>> {
    let owned;
    let set = match (task.uses_images(), dataset) {
        (false, _) => set,
        (true, Some(d)) => {
            owned = set.with_images(d)?;
            &owned
        }
        (true, None) => {
            return Err(Error::Config(format!("task {} needs an image dataset", task.name())))
        }
    };
    let ids = |i: usize, j: usize| vec![set.items()[i].id.clone(), set.items()[j].id.clone()];
    let pairs = shuffle_trials(&enumerate_pairs(set, mode), identity);
    let mut out = Vec::new();
    match task {
        TaskKind::WordWord => {
            for (i, j) in pairs {
                let (a, b) = (&set.items()[i], &set.items()[j]);
                out.push((
                    ReplyKind::Rating,
                    ids(i, j),
                    TrialInput::Ready(Payload::WordPair(a.label.clone(), b.label.clone())),
                ));
            }
        }
        TaskKind::ImageImage => {
            let d = dataset.expect("checked above");
            for (i, j) in pairs {
                let payload =
                    Payload::ImagePair(image_ref(set, i, d, image_root)?, image_ref(set, j, d, image_root)?);
                out.push((ReplyKind::Rating, ids(i, j), TrialInput::Ready(payload)));
            }
        }
        TaskKind::ImageDescription => {
            let d = dataset.expect("checked above");
            let order: Vec<usize> = shuffle_trials(&(0..set.len()).collect::<Vec<_>>(), identity);
            for i in order {
                out.push((
                    ReplyKind::Description,
                    vec![set.items()[i].id.clone()],
                    TrialInput::Ready(Payload::Describe(image_ref(set, i, d, image_root)?)),
                ));
            }
            for (i, j) in pairs {
                out.push((ReplyKind::Rating, ids(i, j), TrialInput::DescribedPair));
            }
        }
        other => {
            return Err(Error::Config(format!(
                "task {} is not pairwise; use plan_sentence_trials",
                other.name()
            )))
        }
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(index, (kind, item_ids, input))| Trial {
            index,
            kind,
            item_ids,
            input,
        })
        .collect())
}

/// Shuffled trials for the sentence tasks: one rating per (sentence, word),
/// or one ranking per word.
pub fn plan_sentence_trials(task: TaskKind, items: &[SentenceItem], identity: &Identity) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    match task {
        TaskKind::WordSentenceRating => {
            for item in items {
                for (id, text) in &item.sentences {
                    out.push((
                        ReplyKind::Rating,
                        vec![item.word.clone(), format!("sentence:{id}")],
                        Payload::WordSentence {
                            sentence: text.clone(),
                            word: item.word.clone(),
                        },
                    ));
                }
            }
        }
        TaskKind::SentenceRanking => {
            for item in items {
                if item.sentences.is_empty() {
                    return Err(Error::Config(format!("no sentences for {:?}", item.word)));
                }
                out.push((
                    ReplyKind::Ranking,
                    vec![item.word.clone()],
                    Payload::Ranking {
                        word: item.word.clone(),
                        sentences: item.sentences.clone(),
                    },
                ));
            }
        }
        other => {
            return Err(Error::Config(format!("task {} is pairwise; use plan_trials", other.name())))
        }
    }
    Ok(shuffle_trials(&out, identity)
        .into_iter()
        .enumerate()
        .map(|(index, (kind, item_ids, payload))| Trial {
            index,
            kind,
            item_ids,
            input: TrialInput::Ready(payload),
        })
        .collect())
}

/// Read a transcript. A final line without a newline (an interrupted write)
/// is ignored; any other malformed line is an error.
pub fn read_transcript(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_transcript(path, &text)?.0)
}

fn parse_transcript(path: &Path, text: &str) -> Result<(Vec<TrialRecord>, usize)> {
    let complete_len = text.rfind('\n').map_or(0, |i| i + 1);
    if complete_len < text.len() {
        log::warn!("{}: ignoring incomplete final line", path.display());
    }
    let mut out = Vec::new();
    for (i, line) in text[..complete_len].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Transcript {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok((out, complete_len))
}

/// Per-session settings.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub template: PromptTemplate,
    pub parser: ReplyParser,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub full_history: bool,
    /// Extra intro placeholders, e.g. `("count", "31")`.
    pub intro_vars: Vec<(String, String)>,
}

impl RunOptions {
    pub fn new(task: TaskKind) -> Self {
        RunOptions {
            template: PromptTemplate::default_for(task),
            parser: ReplyParser::default(),
            temperature: 1.0,
            max_tokens: None,
            full_history: false,
            intro_vars: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantOutcome {
    /// Latest record per trial, in trial order.
    pub records: Vec<TrialRecord>,
    pub new_requests: usize,
    /// Set when a fatal error stopped the session early.
    pub fatal: Option<String>,
}

impl ParticipantOutcome {
    /// Every trial settled and no fatal error.
    pub fn is_complete(&self, planned: usize) -> bool {
        self.fatal.is_none()
            && self.records.len() == planned
            && self.records.iter().all(TrialRecord::is_settled)
    }
}

struct Session<'a> {
    task: TaskKind,
    identity: &'a Identity,
    opts: &'a RunOptions,
    images: HashMap<PathBuf, String>,
}

impl Session<'_> {
    fn image_url(&mut self, img: &ImageRef) -> Result<String, BackendError> {
        if let Some(url) = self.images.get(&img.path) {
            return Ok(url.clone());
        }
        let url = encode_image(&img.path)?.data_url();
        self.images.insert(img.path.clone(), url.clone());
        Ok(url)
    }

    fn message(&mut self, payload: &Payload) -> Result<ChatMessage> {
        let rendered = self.opts.template.render_trial(self.task, self.identity, payload)?;
        let mut msg = ChatMessage::user(rendered.text);
        for img in &rendered.images {
            msg = msg.with_image(self.image_url(img)?);
        }
        Ok(msg)
    }
}

fn resolve(trial: &Trial, descriptions: &HashMap<String, String>) -> Option<Payload> {
    match &trial.input {
        TrialInput::Ready(p) => Some(p.clone()),
        TrialInput::DescribedPair => {
            let a = descriptions.get(&trial.item_ids[0])?;
            let b = descriptions.get(&trial.item_ids[1])?;
            Some(Payload::DescriptionPair(a.clone(), b.clone()))
        }
    }
}

fn digest(body: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(body.to_string().as_bytes()))
}

/// Run (or resume) one participant. Records are appended to `transcript`
/// as each trial finishes; settled trials already in the file are not sent
/// again. A fatal backend error stops the session and is reported in the
/// outcome, leaving the transcript resumable.
pub fn run_participant(
    backend: &dyn ChatBackend,
    task: TaskKind,
    identity: &Identity,
    trials: &[Trial],
    transcript: &Path,
    opts: &RunOptions,
) -> Result<ParticipantOutcome> {
    let mut latest: HashMap<usize, TrialRecord> = HashMap::new();
    if transcript.exists() {
        let text = std::fs::read_to_string(transcript).map_err(|e| Error::io(transcript, e))?;
        let (records, complete_len) = parse_transcript(transcript, &text)?;
        if complete_len < text.len() {
            let f = OpenOptions::new()
                .write(true)
                .open(transcript)
                .map_err(|e| Error::io(transcript, e))?;
            f.set_len(complete_len as u64).map_err(|e| Error::io(transcript, e))?;
        }
        for rec in records {
            let planned = trials.get(rec.trial_index);
            if rec.participant != identity.key || planned.is_none_or(|t| t.item_ids != rec.item_ids) {
                return Err(Error::Transcript {
                    path: transcript.to_path_buf(),
                    line: rec.trial_index + 1,
                    message: format!(
                        "record for {} trial {} does not match the planned trials",
                        rec.participant, rec.trial_index
                    ),
                });
            }
            latest.insert(rec.trial_index, rec);
        }
    } else if let Some(parent) = transcript.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }

    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(transcript)
        .map_err(|e| Error::io(transcript, e))?;
    let mut out = BufWriter::new(file);

    let vars: Vec<(&str, &str)> = opts
        .intro_vars
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    let intro = ChatMessage::user(opts.template.render_intro_with(identity, &vars));
    let mut session = Session {
        task,
        identity,
        opts,
        images: HashMap::new(),
    };
    let mut history = vec![intro.clone()];
    let mut descriptions: HashMap<String, String> = latest
        .values()
        .filter(|r| r.is_ok())
        .filter_map(|r| Some((r.item_ids.first()?.clone(), r.description.clone()?)))
        .collect();
    let mut new_requests = 0;
    let mut fatal = None;

    for trial in trials {
        if let Some(done) = latest.get(&trial.index).filter(|r| r.is_settled()) {
            if opts.full_history {
                if let (Some(reply), Some(payload)) = (&done.reply, resolve(trial, &descriptions)) {
                    history.push(session.message(&payload)?);
                    history.push(ChatMessage::assistant(reply.clone()));
                }
            }
            continue;
        }
        let base = TrialRecord {
            participant: identity.key.clone(),
            trial_index: trial.index,
            task,
            kind: trial.kind,
            item_ids: trial.item_ids.clone(),
            request_digest: String::new(),
            reply: None,
            status: TrialStatus::Skipped,
            compliance: None,
            reason: None,
            rating: None,
            description: None,
            ranking: None,
            latency_ms: 0,
            retries: 0,
            usage: Usage::default(),
        };
        let Some(payload) = resolve(trial, &descriptions) else {
            let rec = TrialRecord {
                reason: Some("missing description".into()),
                ..base
            };
            write_record(&mut out, transcript, &rec)?;
            latest.insert(trial.index, rec);
            continue;
        };
        let msg = match session.message(&payload) {
            Ok(m) => m,
            Err(Error::Backend(e)) => {
                fatal = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let mut messages = if opts.full_history {
            history.clone()
        } else {
            vec![intro.clone()]
        };
        messages.push(msg.clone());
        let request = ChatRequest {
            messages,
            temperature: opts.temperature,
            max_tokens: opts.max_tokens,
            meta: RequestMeta {
                identity: identity.clone(),
                task,
                trial_index: trial.index,
                item_ids: trial.item_ids.clone(),
                payload: payload.clone(),
            },
        };
        let request_digest = digest(&request.body(backend.model()));
        new_requests += 1;
        let rec = match backend.send(&request) {
            Ok(reply) => {
                let parsed = match (&trial.kind, &payload) {
                    (ReplyKind::Description, _) => opts.parser.extract_description(&reply.text),
                    (ReplyKind::Ranking, Payload::Ranking { sentences, .. }) => {
                        let expected: HashSet<u64> = sentences.iter().map(|(id, _)| *id).collect();
                        opts.parser.extract_ranking(&reply.text, &expected)
                    }
                    _ => opts.parser.extract_rating(&reply.text),
                };
                let ok = parsed.is_compliant();
                if opts.full_history {
                    history.push(msg);
                    history.push(ChatMessage::assistant(reply.text.clone()));
                }
                if let (true, Some(d)) = (ok, &parsed.description) {
                    descriptions.insert(trial.item_ids[0].clone(), d.clone());
                }
                TrialRecord {
                    request_digest,
                    reply: Some(reply.text),
                    status: if ok { TrialStatus::Ok } else { TrialStatus::Noncompliant },
                    compliance: Some(parsed.compliance),
                    reason: parsed.reason,
                    rating: parsed.rating.filter(|_| ok),
                    description: parsed.description.filter(|_| ok),
                    ranking: parsed.ranking.filter(|_| ok),
                    latency_ms: reply.latency_ms,
                    retries: reply.retries,
                    usage: reply.usage,
                    ..base
                }
            }
            Err(BackendError::ContentFiltered(m)) => TrialRecord {
                request_digest,
                status: TrialStatus::ContentFiltered,
                reason: Some(m),
                ..base
            },
            Err(BackendError::Transport { attempts, message }) => TrialRecord {
                request_digest,
                status: TrialStatus::TransportError,
                reason: Some(message),
                retries: attempts.saturating_sub(1),
                ..base
            },
            Err(e) => {
                fatal = Some(e.to_string());
                break;
            }
        };
        write_record(&mut out, transcript, &rec)?;
        latest.insert(trial.index, rec);
    }
    out.flush().map_err(|e| Error::io(transcript, e))?;

    let mut records: Vec<TrialRecord> = latest.into_values().collect();
    records.sort_by_key(|r| r.trial_index);
    Ok(ParticipantOutcome {
        records,
        new_requests,
        fatal,
    })
}

fn write_record(out: &mut BufWriter<File>, path: &Path, rec: &TrialRecord) -> Result<()> {
    let line = serde_json::to_string(rec)?;
    writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    // one flushed line per trial keeps the file resumable after a crash
    out.flush().map_err(|e| Error::io(path, e))
}
