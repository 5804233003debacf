use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::RunManifest;
use super::{file_stem, sha256_hex};
use crate::backend::read_transcript;
use crate::corpus::{load_stimulus_set, StimulusSet};
use crate::dsm::{fill_missing, flatten, Dsm, DEFAULT_FILL};
use crate::error::{Error, Result};
use crate::parse::ReplyKind;
use crate::stats::{
    alignment_tables, cohort_icc, default_comparisons, inter_subject, wilcoxon_ranksum, AlignmentTable,
    CompareOptions, IccReport, InterSubjectReport, PValueMethod, RankTestMethod, RankTestReport,
};
use crate::viz::{cohort_scatter, heatmap_svg, rating_histogram, tsne, write_text, TsneParams};

/// Where a system's DSMs come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSource {
    /// A single group-level DSM CSV.
    Dsm(PathBuf),
    /// A directory with `group.csv` and `dsms/*.csv` (and optionally
    /// `transcripts/*.jsonl`).
    Cohort(PathBuf),
    /// A run directory with a manifest; one system per temperature.
    Run(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemInput {
    pub name: String,
    pub source: SystemSource,
}

impl SystemInput {
    pub fn new(name: impl Into<String>, source: SystemSource) -> Self {
        SystemInput {
            name: name.into(),
            source,
        }
    }
}

/// One analysable system after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSystem {
    pub name: String,
    pub kind: String,
    /// Manifest hash for runs, content hash otherwise.
    pub hash: String,
    pub temperature: Option<f64>,
    pub group: Dsm,
    /// Individual participants (empty for a bare DSM).
    pub members: Vec<(String, Dsm)>,
    /// Raw 0–100 ratings for histograms.
    pub ratings: Vec<f64>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn load_cohort_dir(name: &str, dir: &Path, hash: Option<String>) -> Result<LoadedSystem> {
    let group_path = dir.join("group.csv");
    let mut h = String::new();
    let group_bytes = read_bytes(&group_path)?;
    let _ = write!(h, "group.csv:{};", sha256_hex(&group_bytes));
    let group = Dsm::read_csv(group_bytes.as_slice())?;
    let mut members = Vec::new();
    let mut dsm_values = Vec::new();
    for p in sorted_files(&dir.join("dsms"), "csv")? {
        let bytes = read_bytes(&p)?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = write!(h, "{stem}:{};", sha256_hex(&bytes));
        let d = Dsm::read_csv(bytes.as_slice())?;
        dsm_values.extend(flatten(&d, None).values.iter().map(|v| 100.0 * (1.0 - v)));
        members.push((stem, d));
    }
    let mut ratings = Vec::new();
    for p in sorted_files(&dir.join("transcripts"), "jsonl")? {
        ratings.extend(
            read_transcript(&p)?
                .iter()
                .filter(|r| r.is_ok() && r.kind == ReplyKind::Rating)
                .filter_map(|r| r.rating),
        );
    }
    if ratings.is_empty() {
        ratings = dsm_values;
    }
    Ok(LoadedSystem {
        name: name.to_string(),
        kind: "cohort".into(),
        hash: hash.unwrap_or_else(|| sha256_hex(h.as_bytes())),
        temperature: None,
        group,
        members,
        ratings,
    })
}

/// Load one input; a run directory yields one system per temperature
/// (suffixed `@temp-t` when there are several).
pub fn load_system(input: &SystemInput) -> Result<Vec<LoadedSystem>> {
    match &input.source {
        SystemSource::Dsm(path) => {
            let bytes = read_bytes(path)?;
            Ok(vec![LoadedSystem {
                name: input.name.clone(),
                kind: "dsm".into(),
                hash: sha256_hex(&bytes),
                temperature: None,
                group: Dsm::read_csv(bytes.as_slice())?,
                members: Vec::new(),
                ratings: Vec::new(),
            }])
        }
        SystemSource::Cohort(dir) => Ok(vec![load_cohort_dir(&input.name, dir, None)?]),
        SystemSource::Run(dir) => {
            let m = RunManifest::load(dir)?;
            let several = m.runs.len() > 1;
            let mut out = Vec::new();
            for run in &m.runs {
                if run.group_dsm.is_none() {
                    log::warn!("{}: {} has no group DSM, skipped", input.name, run.dir);
                    continue;
                }
                let name = if several {
                    format!("{}@{}", input.name, run.dir)
                } else {
                    input.name.clone()
                };
                let mut s = load_cohort_dir(&name, &dir.join(&run.dir), Some(m.hash.clone()))?;
                s.kind = "run".into();
                s.temperature = Some(run.temperature);
                out.push(s);
            }
            if out.is_empty() {
                return Err(Error::Config(format!("{}: run has no DSMs yet", dir.display())));
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub systems: Vec<SystemInput>,
    /// Stimulus table supplying categories for the within/between split.
    pub stimuli: Option<PathBuf>,
    /// Defaults to C(#systems, 2).
    pub m_comparisons: Option<usize>,
    pub alpha: f64,
    pub method: PValueMethod,
    pub tsne: Option<TsneParams>,
    pub fill: f64,
    pub bins: usize,
    pub out_dir: PathBuf,
}

impl AnalyzeOptions {
    pub fn new(systems: Vec<SystemInput>, out_dir: impl Into<PathBuf>) -> Self {
        AnalyzeOptions {
            systems,
            stimuli: None,
            m_comparisons: None,
            alpha: 0.05,
            method: PValueMethod::default(),
            tsne: None,
            fill: DEFAULT_FILL,
            bins: 20,
            out_dir: out_dir.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub name: String,
    pub kind: String,
    pub hash: String,
    pub temperature: Option<f64>,
    pub participants: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub name: String,
    pub icc: Option<IccReport>,
    pub icc_unavailable: Option<String>,
    pub inter_subject: Option<InterSubjectReport>,
    pub inter_subject_unavailable: Option<String>,
}

/// Rank-sum test between two cohorts' pairwise inter-subject correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestEntry {
    pub a: String,
    pub b: String,
    pub report: Option<RankTestReport>,
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneSummary {
    pub points: usize,
    pub items_used: usize,
    pub params: TsneParams,
    pub kl_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub inputs: Vec<InputRecord>,
    pub m_comparisons: usize,
    pub alpha: f64,
    pub method: PValueMethod,
    pub tables: Vec<AlignmentTable>,
    pub cohorts: Vec<CohortReport>,
    pub rank_tests: Vec<RankTestEntry>,
    pub tsne: Option<TsneSummary>,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Alignment report\n\n## Inputs\n\n| system | kind | hash | participants | items |\n|---|---|---|---|---|\n");
        for i in &self.inputs {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                i.name,
                i.kind,
                &i.hash[..16.min(i.hash.len())],
                i.participants,
                i.items
            );
        }
        let _ = writeln!(
            s,
            "\nSpearman p-values: {}; Bonferroni over m = {} at alpha = {} (`*` = significant).\n",
            self.method.label(),
            self.m_comparisons,
            self.alpha
        );
        for t in &self.tables {
            let _ = writeln!(s, "## Alignment ({})\n", t.mask_name.as_deref().unwrap_or("all pairs"));
            s.push_str(&t.to_markdown());
            for c in t.cells.iter().filter(|c| c.unavailable.is_some()) {
                let _ = writeln!(
                    s,
                    "\n{} vs {}: unavailable ({})",
                    t.systems[c.a],
                    t.systems[c.b],
                    c.unavailable.as_deref().unwrap_or("")
                );
            }
            s.push('\n');
        }
        if !self.cohorts.is_empty() {
            s.push_str("## Cohorts\n\n| system | ICC(2,1) | ICC(2,k) | pairwise r_s median | leave-one-out median |\n|---|---|---|---|---|\n");
            for c in &self.cohorts {
                let icc = |f: fn(&IccReport) -> f64| c.icc.as_ref().map_or("n/a".to_string(), |r| format!("{:.3}", f(r)));
                let med = |v: Option<f64>| v.map_or("n/a".to_string(), |m| format!("{m:.3}"));
                let is = c.inter_subject.as_ref();
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    c.name,
                    icc(|r| r.icc_single),
                    icc(|r| r.icc_average),
                    med(is.and_then(|r| r.pairwise_summary).map(|m| m.median)),
                    med(is.and_then(|r| r.leave_one_out_summary).map(|m| m.median)),
                );
            }
            s.push('\n');
        }
        if !self.rank_tests.is_empty() {
            s.push_str("## Inter-subject rank-sum tests\n\n| a | b | W | p (two-sided) | method |\n|---|---|---|---|---|\n");
            for r in &self.rank_tests {
                match &r.report {
                    Some(t) => {
                        let method = match t.method {
                            RankTestMethod::Exact => "exact",
                            RankTestMethod::NormalApprox => "normal approx",
                        };
                        let _ = writeln!(s, "| {} | {} | {} | {:.4e} | {method} |", r.a, r.b, t.w, t.p_two_sided);
                    }
                    None => {
                        let _ = writeln!(s, "| {} | {} | n/a | n/a | {} |", r.a, r.b, r.unavailable.as_deref().unwrap_or(""));
                    }
                }
            }
            s.push('\n');
        }
        if let Some(t) = &self.tsne {
            let _ = writeln!(
                s,
                "## T-SNE\n\n{} participants over {} items; perplexity {}, {} iterations, seed {}, final KL {:.4}.\n",
                t.points, t.items_used, t.params.perplexity, t.params.max_iter, t.params.seed, t.kl_divergence
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "- {n}");
        }
        s
    }
}

/// Labels present in every DSM, in the first one's order.
fn shared_labels<'a>(dsms: impl Iterator<Item = &'a Dsm>) -> Vec<String> {
    let mut it = dsms;
    let Some(first) = it.next() else {
        return Vec::new();
    };
    let mut labels = first.labels().to_vec();
    for d in it {
        labels.retain(|l| d.labels().contains(l));
    }
    labels
}

/// Compare every pair of systems and write the report files into
/// `opts.out_dir`.
pub fn cmd_analyze(opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let mut systems = Vec::new();
    for input in &opts.systems {
        systems.extend(load_system(input)?);
    }
    if systems.len() < 2 {
        return Err(Error::Config(format!("need at least 2 systems, got {}", systems.len())));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = systems.iter().find(|s| !seen.insert(s.name.clone())) {
        return Err(Error::Config(format!("system name {:?} used twice", dup.name)));
    }
    let categories: Option<StimulusSet> = match &opts.stimuli {
        Some(p) => Some(load_stimulus_set(p, None)?),
        None => None,
    };
    let m = opts.m_comparisons.unwrap_or_else(|| default_comparisons(systems.len()));
    let compare = CompareOptions {
        method: opts.method,
        alpha: opts.alpha,
        m_comparisons: m,
    };
    let names: Vec<String> = systems.iter().map(|s| s.name.clone()).collect();
    let groups: Vec<Dsm> = systems.iter().map(|s| s.group.clone()).collect();
    let tables = alignment_tables(&names, &groups, categories.as_ref(), &compare);
    let mut notes = Vec::new();

    let mut cohorts = Vec::new();
    for s in systems.iter().filter(|s| !s.members.is_empty()) {
        let dsms: Vec<Dsm> = s.members.iter().map(|(_, d)| d.clone()).collect();
        let keys: Vec<String> = s.members.iter().map(|(k, _)| k.clone()).collect();
        let (icc, icc_unavailable) = match cohort_icc(&dsms) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let (inter, inter_unavailable) = match inter_subject(&keys, &dsms) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        cohorts.push(CohortReport {
            name: s.name.clone(),
            icc,
            icc_unavailable,
            inter_subject: inter,
            inter_subject_unavailable: inter_unavailable,
        });
    }
    let mut rank_tests = Vec::new();
    for i in 0..cohorts.len() {
        for j in (i + 1)..cohorts.len() {
            let values = |c: &CohortReport| c.inter_subject.as_ref().map(|r| r.pairwise_values()).unwrap_or_default();
            let (a, b) = (values(&cohorts[i]), values(&cohorts[j]));
            let (report, unavailable) = match wilcoxon_ranksum(&a, &b) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rank_tests.push(RankTestEntry {
                a: cohorts[i].name.clone(),
                b: cohorts[j].name.clone(),
                report,
                unavailable,
            });
        }
    }

    let out = &opts.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for s in &systems {
        let filled = fill_missing(&s.group, opts.fill)?;
        write_text(&out.join("heatmaps").join(format!("{}.svg", file_stem(&s.name))), &heatmap_svg(&filled)?)?;
        if !s.ratings.is_empty() {
            let h = rating_histogram(&s.ratings, opts.bins)?;
            let stem = file_stem(&s.name);
            write_text(&out.join("histograms").join(format!("{stem}.csv")), &h.to_csv())?;
            write_text(&out.join("histograms").join(format!("{stem}.svg")), &h.to_svg(&s.name))?;
        }
    }

    let mut tsne_summary = None;
    if let Some(params) = &opts.tsne {
        match cohort_layout(&systems, params, opts.fill) {
            Ok((layout, group_of, items)) => {
                write_text(&out.join("tsne_layout.csv"), &layout.to_csv(&group_of))?;
                write_text(&out.join("tsne_scatter.svg"), &cohort_scatter(&layout, &group_of)?)?;
                if layout.params.perplexity != params.perplexity {
                    notes.push(format!(
                        "T-SNE perplexity lowered from {} to {} for {} points",
                        params.perplexity,
                        layout.params.perplexity,
                        layout.labels.len()
                    ));
                }
                tsne_summary = Some(TsneSummary {
                    points: layout.labels.len(),
                    items_used: items,
                    params: layout.params,
                    kl_divergence: layout.kl_divergence,
                });
            }
            Err(e) => notes.push(format!("T-SNE skipped: {e}")),
        }
    }

    let report = AnalysisReport {
        inputs: systems
            .iter()
            .map(|s| InputRecord {
                name: s.name.clone(),
                kind: s.kind.clone(),
                hash: s.hash.clone(),
                temperature: s.temperature,
                participants: s.members.len(),
                items: s.group.n(),
            })
            .collect(),
        m_comparisons: m,
        alpha: opts.alpha,
        method: opts.method,
        tables,
        cohorts,
        rank_tests,
        tsne: tsne_summary,
        notes,
    };
    for t in &report.tables {
        let suffix = t.mask_name.as_deref().unwrap_or("all");
        write_text(&out.join(format!("alignment_{suffix}.csv")), &t.to_csv())?;
    }
    write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_text(&out.join("report.md"), &report.to_markdown())?;
    Ok(report)
}

/// T-SNE over every participant of every cohort system, on the items all of
/// them share. Returns the layout, label → system and the item count.
pub(crate) fn cohort_layout(
    systems: &[LoadedSystem],
    params: &TsneParams,
    fill: f64,
) -> Result<(crate::viz::EmbeddingLayout, HashMap<String, String>, usize)> {
    let members: Vec<(&str, &str, &Dsm)> = systems
        .iter()
        .flat_map(|s| s.members.iter().map(move |(k, d)| (s.name.as_str(), k.as_str(), d)))
        .collect();
    if members.len() < 4 {
        return Err(Error::Viz(format!("need at least 4 participants, have {}", members.len())));
    }
    let items = shared_labels(members.iter().map(|(_, _, d)| *d));
    if items.len() < 3 {
        return Err(Error::Viz("participants share fewer than 3 items".into()));
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut group_of = HashMap::new();
    for (system, key, d) in &members {
        let filled = fill_missing(&d.restrict(&items)?, fill)?;
        let label = format!("{system}/{key}");
        group_of.insert(label.clone(), system.to_string());
        labels.push(label);
        data.push(flatten(&filled, None).values);
    }
    let mut p = *params;
    let n = labels.len() as f64;
    if p.perplexity >= n {
        p.perplexity = ((n - 1.0) / 3.0).max(1.0);
    }
    Ok((tsne(&labels, &data, &p)?, group_of, items.len()))
}
