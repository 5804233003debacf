//! Experiment configuration and the end-to-end commands.

mod analyze;
pub mod cli;
mod manifest;
mod run;
mod tools;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{BackendConfig, BackendKind, FilterRule, SentenceItem};
use crate::cohort::{build_cohort, Honorific, Identity, PromptTemplate, TaskKind};
use crate::corpus::{load_stimulus_set, PairMode, StimulusSet};
use crate::error::{Error, Result};

pub use analyze::{
    cmd_analyze, load_system, AnalysisReport, AnalyzeOptions, CohortReport, InputRecord, LoadedSystem,
    RankTestEntry, SystemInput, SystemSource, TsneSummary,
};
pub use manifest::{ParticipantEntry, ParticipantStatus, RunManifest, StatusCounts, TemperatureRun};
pub use run::{cmd_run, run_with_backend, temperature_dir, RunSummary};
pub use tools::{
    cmd_baseline, cmd_ingest_human, cmd_report, cmd_viz, BaselineOptions, BaselineSummary, EmbeddingFormat,
    IngestOptions, IngestSummary, UsageReport, UsageRow, VizOptions,
};

pub const CONFIG_VERSION: u32 = 1;

/// Who takes part: a surname × honorific product or anonymous repeats.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub surnames: Vec<String>,
    pub honorifics: Vec<Honorific>,
    pub anonymous_repeats: Option<usize>,
}

/// Where the synthetic backend's latent geometry comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatentSource {
    /// Random points in `dims` dimensions.
    Random { dims: usize },
    /// Category clusters whose centres spread with `separation`.
    Clustered { separation: f64 },
    /// A DSM CSV over (at least) the run's items.
    DsmFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub latent: LatentSource,
    pub persona_offset_scale: f64,
    pub noise_scale: f64,
    pub noncompliance_rate: f64,
    pub bimodal_push: f64,
    pub filter_rules: Vec<FilterRule>,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        SyntheticSettings {
            latent: LatentSource::Clustered { separation: 3.0 },
            persona_offset_scale: 5.0,
            noise_scale: 10.0,
            noncompliance_rate: 0.0,
            bimodal_push: 0.0,
            filter_rules: Vec::new(),
        }
    }
}

fn default_pair_mode() -> PairMode {
    PairMode::OrderedWithDiagonal
}

/// One experiment: a JSON document with `"version": 1`. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub stimuli: PathBuf,
    /// Restrict the run to these stimulus ids (file order is kept).
    #[serde(default)]
    pub items: Option<Vec<String>>,
    /// Image column to use for image tasks.
    #[serde(default)]
    pub image_dataset: Option<String>,
    #[serde(default)]
    pub image_root: Option<PathBuf>,
    /// JSON list of `{"word": ..., "sentences": [[id, text], ...]}` for the
    /// sentence tasks.
    #[serde(default)]
    pub sentences: Option<PathBuf>,
    pub task: TaskKind,
    #[serde(default = "default_pair_mode")]
    pub pair_mode: PairMode,
    pub cohort: CohortSpec,
    /// Empty means `[backend.temperature]`.
    #[serde(default)]
    pub temperatures: Vec<f64>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub synthetic: SyntheticSettings,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub template: Option<PromptTemplate>,
    #[serde(default)]
    pub refusal_markers: Option<Vec<String>>,
    /// Price table JSON for cost accounting.
    #[serde(default)]
    pub prices: Option<PathBuf>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl ExperimentConfig {
    /// A config with defaults for everything optional.
    pub fn new(stimuli: impl Into<PathBuf>, task: TaskKind, cohort: CohortSpec, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            stimuli: stimuli.into(),
            items: None,
            image_dataset: None,
            image_root: None,
            sentences: None,
            task,
            pair_mode: default_pair_mode(),
            cohort,
            temperatures: Vec::new(),
            backend: BackendConfig::default(),
            synthetic: SyntheticSettings::default(),
            output_dir: output_dir.into(),
            base_seed: 0,
            template: None,
            refusal_markers: None,
            prices: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(CONFIG_VERSION) => {}
            Some(v) => return Err(Error::Config(format!("unsupported config version {v}"))),
            None => return Err(Error::Config("missing \"version\"".into())),
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn temperature_list(&self) -> Vec<f64> {
        if self.temperatures.is_empty() {
            vec![self.backend.temperature]
        } else {
            self.temperatures.clone()
        }
    }

    /// Every problem found without touching the network, one per entry.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.version != CONFIG_VERSION {
            out.push(format!("unsupported config version {}", self.version));
        }
        if !self.resolve(&self.stimuli).is_file() {
            out.push(format!("stimuli file {} not found", self.resolve(&self.stimuli).display()));
        }
        if self.output_dir.as_os_str().is_empty() {
            out.push("output_dir is empty".into());
        }
        for t in &self.temperatures {
            if !(*t >= 0.0 && t.is_finite()) {
                out.push(format!("temperature {t} must be >= 0"));
            }
        }
        let temps = self.temperature_list();
        for (k, t) in temps.iter().enumerate() {
            if temps[..k].iter().any(|u| temperature_dir(*u) == temperature_dir(*t)) {
                out.push(format!("temperature {t} listed twice"));
            }
        }
        out.extend(self.backend.problems());
        if self.backend.kind == BackendKind::Http {
            if let Some(var) = &self.backend.api_key_env {
                if std::env::var_os(var).is_none() {
                    out.push(format!("environment variable {var} (api key) is not set"));
                }
            }
        }
        if let Err(e) = build_cohort(
            &self.cohort.surnames,
            &self.cohort.honorifics,
            self.cohort.anonymous_repeats,
            self.base_seed,
        ) {
            out.push(e.to_string());
        }
        if self.task.uses_images() && self.image_dataset.is_none() {
            out.push(format!("task {} needs image_dataset", self.task.name()));
        }
        let sentence_task = matches!(self.task, TaskKind::WordSentenceRating | TaskKind::SentenceRanking);
        match (&self.sentences, sentence_task) {
            (None, true) => out.push(format!("task {} needs a sentences file", self.task.name())),
            (Some(p), true) if !self.resolve(p).is_file() => {
                out.push(format!("sentences file {} not found", self.resolve(p).display()))
            }
            (Some(_), false) => out.push(format!("sentences is only used by the sentence tasks, not {}", self.task.name())),
            _ => {}
        }
        if let Some(items) = &self.items {
            if items.is_empty() {
                out.push("items is empty".into());
            }
        }
        if let Some(p) = &self.prices {
            if !self.resolve(p).is_file() {
                out.push(format!("prices file {} not found", self.resolve(p).display()));
            }
        }
        if self.template.as_ref().is_some_and(|t| t.intro_text.trim().is_empty() || t.trial_text.trim().is_empty()) {
            out.push("template texts must not be empty".into());
        }
        if self.backend.kind == BackendKind::Synthetic {
            let s = &self.synthetic;
            for (name, p) in [("noncompliance_rate", s.noncompliance_rate), ("bimodal_push", s.bimodal_push)] {
                if !(0.0..=1.0).contains(&p) {
                    out.push(format!("synthetic.{name} must be in [0, 1], got {p}"));
                }
            }
            for (name, v) in [
                ("persona_offset_scale", s.persona_offset_scale),
                ("noise_scale", s.noise_scale),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    out.push(format!("synthetic.{name} must be >= 0, got {v}"));
                }
            }
            match &s.latent {
                LatentSource::Random { dims: 0 } => out.push("synthetic.latent.dims must be >= 1".into()),
                LatentSource::Clustered { separation } if !(*separation >= 0.0) => {
                    out.push("synthetic.latent.separation must be >= 0".into())
                }
                LatentSource::DsmFile { path } if !self.resolve(path).is_file() => {
                    out.push(format!("latent DSM {} not found", self.resolve(path).display()))
                }
                _ => {}
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("\n")))
        }
    }

    /// The stimulus set, narrowed to `items` when given.
    pub fn stimulus_set(&self) -> Result<StimulusSet> {
        let root = self.image_root.as_ref().map(|r| self.resolve(r));
        let set = load_stimulus_set(&self.resolve(&self.stimuli), root.as_deref())?;
        let Some(items) = &self.items else {
            return Ok(set);
        };
        if let Some(bad) = items.iter().find(|id| set.index_of(id).is_none()) {
            return Err(Error::Config(format!("item {bad:?} is not in the stimulus set")));
        }
        let kept = set.items().iter().filter(|s| items.contains(&s.id)).cloned().collect();
        StimulusSet::new(set.name.clone(), kept)
    }

    pub fn identities(&self) -> Result<Vec<Identity>> {
        build_cohort(
            &self.cohort.surnames,
            &self.cohort.honorifics,
            self.cohort.anonymous_repeats,
            self.base_seed,
        )
    }

    pub fn prompt_template(&self) -> PromptTemplate {
        self.template.clone().unwrap_or_else(|| PromptTemplate::default_for(self.task))
    }

    pub fn sentence_items(&self) -> Result<Option<Vec<SentenceItem>>> {
        let Some(p) = &self.sentences else {
            return Ok(None);
        };
        let path = self.resolve(p);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let items: Vec<SentenceItem> =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Some(items))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file-name-safe version of a system or participant name.
pub(crate) fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Write via a temporary sibling and rename, so readers never see half a file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
