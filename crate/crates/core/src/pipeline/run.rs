use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;

use super::manifest::{ParticipantEntry, ParticipantStatus, RunManifest, StatusCounts, TemperatureRun};
use super::{file_stem, sha256_hex, ExperimentConfig, LatentSource};
use crate::backend::{
    clustered_latent, plan_sentence_trials, plan_trials, random_latent, run_participant, ChatBackend,
    HttpBackend, Price, PriceTable, RunOptions, SentenceItem, SyntheticBackend, SyntheticRaterConfig, Trial,
    TrialRecord, UsageLedger,
};
use crate::backend::BackendKind;
use crate::cohort::{derive_seed, Identity, TaskKind};
use crate::corpus::StimulusSet;
use crate::dsm::{group_average, to_dsm, Dsm, RatingMatrix};
use crate::error::{Error, Result};
use crate::parse::{ReplyKind, ReplyParser};

/// What a run did, beyond the manifest it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub manifest_dir: PathBuf,
    /// Requests sent by this invocation (0 when resuming a finished run).
    pub new_requests: usize,
    pub complete: bool,
}

/// Subdirectory for one temperature, e.g. `temp-0.7`.
pub fn temperature_dir(t: f64) -> String {
    format!("temp-{t}")
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

struct Plan {
    task: TaskKind,
    set: StimulusSet,
    labels: Vec<String>,
    sentences: Option<Vec<SentenceItem>>,
    dataset: Option<String>,
    image_root: Option<PathBuf>,
    pair_mode: crate::corpus::PairMode,
    opts: RunOptions,
    price: Option<Price>,
}

impl Plan {
    fn trials(&self, identity: &Identity) -> Result<Vec<Trial>> {
        match &self.sentences {
            Some(items) => plan_sentence_trials(self.task, items, identity),
            None => plan_trials(
                self.task,
                &self.set,
                self.pair_mode,
                self.dataset.as_deref(),
                self.image_root.as_deref(),
                identity,
            ),
        }
    }
}

fn build_plan(cfg: &ExperimentConfig) -> Result<Plan> {
    let set = cfg.stimulus_set()?;
    let labels = match (&cfg.image_dataset, cfg.task.uses_images()) {
        (Some(d), true) => set.with_images(d)?.ids(),
        _ => set.ids(),
    };
    let sentences = cfg.sentence_items()?;
    let mut opts = RunOptions::new(cfg.task);
    opts.template = cfg.prompt_template();
    if let Some(markers) = &cfg.refusal_markers {
        opts.parser = ReplyParser {
            refusal_markers: markers.clone(),
        };
    }
    opts.max_tokens = cfg.backend.max_tokens;
    opts.full_history = cfg.backend.full_history;
    if let (TaskKind::SentenceRanking, Some(items)) = (cfg.task, &sentences) {
        let count = items.iter().map(|i| i.sentences.len()).max().unwrap_or(0);
        opts.intro_vars.push(("count".into(), count.to_string()));
    }
    let price = match &cfg.prices {
        Some(p) => PriceTable::load(&cfg.resolve(p))?.get(&cfg.backend.model).copied(),
        None => None,
    };
    Ok(Plan {
        task: cfg.task,
        set,
        labels,
        sentences,
        dataset: cfg.image_dataset.clone(),
        image_root: cfg.image_root.as_ref().map(|r| cfg.resolve(r)),
        pair_mode: cfg.pair_mode,
        opts,
        price,
    })
}

fn build_backend(cfg: &ExperimentConfig, plan: &Plan) -> Result<Box<dyn ChatBackend>> {
    match cfg.backend.kind {
        BackendKind::Http => Ok(Box::new(HttpBackend::from_config(&cfg.backend)?)),
        BackendKind::Synthetic => {
            let s = &cfg.synthetic;
            let seed = derive_seed(cfg.base_seed, "latent");
            let latent = match &s.latent {
                LatentSource::Random { dims } => random_latent(&plan.labels, *dims, seed),
                LatentSource::Clustered { separation } => {
                    let set = StimulusSet::new(
                        plan.set.name.clone(),
                        plan.set.items().iter().filter(|i| plan.labels.contains(&i.id)).cloned().collect(),
                    )?;
                    clustered_latent(&set, *separation, seed)
                }
                LatentSource::DsmFile { path } => Dsm::load_csv(&cfg.resolve(path))?.restrict(&plan.labels)?,
            };
            let rater = SyntheticRaterConfig {
                latent,
                persona_offset_scale: s.persona_offset_scale,
                noise_scale: s.noise_scale,
                noncompliance_rate: s.noncompliance_rate,
                bimodal_push: s.bimodal_push,
                filter_rules: s.filter_rules.clone(),
                seed: cfg.base_seed,
            };
            Ok(Box::new(SyntheticBackend::new(rater)?.with_model(cfg.backend.model.clone())))
        }
    }
}

/// Ordered similarity ratings from the settled pair trials.
pub(crate) fn rating_matrix(records: &[TrialRecord], labels: &[String]) -> Result<RatingMatrix> {
    let mut m = RatingMatrix::new(labels.to_vec());
    for r in records.iter().filter(|r| r.is_ok() && r.kind == ReplyKind::Rating) {
        let (Some(rating), [a, b]) = (r.rating, r.item_ids.as_slice()) else {
            continue;
        };
        let (Some(i), Some(j)) = (labels.iter().position(|l| l == a), labels.iter().position(|l| l == b)) else {
            continue;
        };
        m.set(i, j, rating)?;
    }
    Ok(m)
}

/// Run every temperature × participant in `cfg`, resuming whatever the
/// output directory already holds.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let plan = build_plan(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let backend = build_backend(cfg, &plan).map_err(|e| Error::Config(e.to_string()))?;
    execute(cfg, plan, backend.as_ref())
}

/// Like [`cmd_run`] with a caller-supplied backend; `cfg.backend` only
/// contributes session settings.
pub fn run_with_backend(cfg: &ExperimentConfig, backend: &dyn ChatBackend) -> Result<RunSummary> {
    cfg.validate()?;
    let plan = build_plan(cfg).map_err(|e| Error::Config(e.to_string()))?;
    execute(cfg, plan, backend)
}

fn execute(cfg: &ExperimentConfig, plan: Plan, backend: &dyn ChatBackend) -> Result<RunSummary> {
    let identities = cfg.identities()?;
    let out = cfg.output_path();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut manifest = RunManifest::new(cfg.clone(), now());
    if out.join(RunManifest::FILE_NAME).exists() {
        let old = RunManifest::load(&out)?;
        let snapshot = |c: &ExperimentConfig| {
            let mut v = serde_json::to_value(c).expect("config serializes");
            v.as_object_mut().map(|o| o.remove("output_dir"));
            v
        };
        if snapshot(&old.config) != snapshot(cfg) {
            return Err(Error::Config(format!(
                "{} holds a run with a different config",
                out.display()
            )));
        }
        manifest.started_at = old.started_at;
    }
    manifest.runs = cfg
        .temperature_list()
        .into_iter()
        .map(|t| TemperatureRun {
            temperature: t,
            dir: temperature_dir(t),
            group_dsm: None,
            participants: identities
                .iter()
                .map(|id| ParticipantEntry {
                    key: id.key.clone(),
                    transcript: format!("{}/transcripts/{}.jsonl", temperature_dir(t), file_stem(&id.key)),
                    dsm: None,
                    status: ParticipantStatus::Pending,
                    planned: 0,
                    counts: StatusCounts::default(),
                    transcript_sha256: None,
                    usage: None,
                    error: None,
                })
                .collect(),
        })
        .collect();
    manifest.save(&out, now())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.backend.parallel_participants)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let manifest = Mutex::new(manifest);
    let mut new_requests = 0;
    let runs = manifest.lock().expect("manifest lock").runs.len();
    for r in 0..runs {
        let t = manifest.lock().expect("manifest lock").runs[r].temperature;
        let mut opts = plan.opts.clone();
        opts.temperature = t;
        let results: Vec<(usize, Option<Dsm>)> = pool.install(|| {
            identities
                .par_iter()
                .enumerate()
                .map(|(p, identity)| {
                    let (entry, sent, dsm) = run_one(&plan, &opts, backend, identity, &out, t);
                    let mut m = manifest.lock().expect("manifest lock");
                    m.runs[r].participants[p] = entry;
                    if let Err(e) = m.save(&out, now()) {
                        log::error!("saving manifest: {e}");
                    }
                    (sent, dsm)
                })
                .collect()
        });
        new_requests += results.iter().map(|(n, _)| n).sum::<usize>();
        let dsms: Vec<Dsm> = results.into_iter().filter_map(|(_, d)| d).collect();
        if !dsms.is_empty() {
            let group = group_average(&dsms)?;
            let rel = format!("{}/group.csv", temperature_dir(t));
            group.dsm.save_csv(&out.join(&rel))?;
            let mut m = manifest.lock().expect("manifest lock");
            m.runs[r].group_dsm = Some(rel);
            m.save(&out, now())?;
        }
    }
    let manifest = manifest.into_inner().expect("manifest lock");
    Ok(RunSummary {
        complete: manifest.is_complete(),
        manifest,
        manifest_dir: out,
        new_requests,
    })
}

fn run_one(
    plan: &Plan,
    opts: &RunOptions,
    backend: &dyn ChatBackend,
    identity: &Identity,
    out: &Path,
    t: f64,
) -> (ParticipantEntry, usize, Option<Dsm>) {
    let rel = format!("{}/transcripts/{}.jsonl", temperature_dir(t), file_stem(&identity.key));
    let mut entry = ParticipantEntry {
        key: identity.key.clone(),
        transcript: rel.clone(),
        dsm: None,
        status: ParticipantStatus::Failed,
        planned: 0,
        counts: StatusCounts::default(),
        transcript_sha256: None,
        usage: None,
        error: None,
    };
    let trials = match plan.trials(identity) {
        Ok(t) => t,
        Err(e) => {
            entry.error = Some(e.to_string());
            return (entry, 0, None);
        }
    };
    entry.planned = trials.len();
    let path = out.join(&rel);
    let outcome = match run_participant(backend, plan.task, identity, &trials, &path, opts) {
        Ok(o) => o,
        Err(e) => {
            log::warn!("{}: {e}", identity.key);
            entry.error = Some(e.to_string());
            return (entry, 0, None);
        }
    };
    entry.counts = StatusCounts::from_records(&outcome.records);
    entry.status = if outcome.is_complete(trials.len()) {
        ParticipantStatus::Complete
    } else {
        ParticipantStatus::Partial
    };
    entry.error = outcome.fatal.clone();
    entry.transcript_sha256 = std::fs::read(&path).ok().map(|b| sha256_hex(&b));
    let mut ledger = UsageLedger::default();
    ledger.add(&identity.key, &outcome.records, plan.price.as_ref());
    entry.usage = ledger.participants.remove(&identity.key);

    let mut dsm = None;
    if plan.task.is_pairwise() {
        match rating_matrix(&outcome.records, &plan.labels) {
            Ok(m) if m.present() > 0 => {
                let d = to_dsm(&m);
                let rel_dsm = format!("{}/dsms/{}.csv", temperature_dir(t), file_stem(&identity.key));
                match d.save_csv(&out.join(&rel_dsm)) {
                    Ok(()) => {
                        entry.dsm = Some(rel_dsm);
                        dsm = Some(d);
                    }
                    Err(e) => entry.error = Some(e.to_string()),
                }
            }
            Ok(_) => {}
            Err(e) => entry.error = Some(e.to_string()),
        }
    }
    (entry, outcome.new_requests, dsm)
}
