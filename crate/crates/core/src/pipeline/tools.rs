use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::analyze::{cohort_layout, load_system, SystemInput};
use super::manifest::{RunManifest, StatusCounts};
use super::{file_stem, sha256_hex, write_atomic};
use crate::backend::{read_transcript, PriceTable, UsageLedger};
use crate::baseline::{cosine_dsm, load_embedding_csv, load_word_vectors};
use crate::dsm::{fill_missing, group_average, human_rating_matrices, mirror_human, read_human_ratings};
use crate::error::{Error, Result};
use crate::viz::{cohort_scatter, heatmap_svg, rating_histogram, write_text, TsneParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    /// Whitespace-separated `token v1 v2 ...` lines.
    WordVectors,
    /// CSV with header `label,d0,d1,...`.
    Csv,
}

impl EmbeddingFormat {
    pub fn from_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            EmbeddingFormat::Csv
        } else {
            EmbeddingFormat::WordVectors
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOptions {
    pub embeddings: PathBuf,
    pub format: Option<EmbeddingFormat>,
    pub labels: Vec<String>,
    pub out: PathBuf,
    /// Fail instead of dropping labels without a vector.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub items: usize,
    pub missing: Vec<String>,
    pub halved: bool,
}

/// Cosine-distance DSM from an embedding file.
pub fn cmd_baseline(opts: &BaselineOptions) -> Result<BaselineSummary> {
    if opts.labels.is_empty() {
        return Err(Error::Config("no labels given".into()));
    }
    let format = opts.format.unwrap_or_else(|| EmbeddingFormat::from_path(&opts.embeddings));
    let (table, missing) = match format {
        EmbeddingFormat::WordVectors => {
            let load = load_word_vectors(&opts.embeddings, &opts.labels)?;
            (load.table, load.missing)
        }
        EmbeddingFormat::Csv => {
            let table = load_embedding_csv(&opts.embeddings)?;
            let missing = opts.labels.iter().filter(|l| table.get(l).is_none()).cloned().collect();
            (table, missing)
        }
    };
    if !missing.is_empty() {
        if opts.strict {
            return Err(Error::Embedding(format!("no vector for: {}", missing.join(", "))));
        }
        log::warn!("no vector for {} labels: {}", missing.len(), missing.join(", "));
    }
    let present: Vec<String> = opts.labels.iter().filter(|l| !missing.contains(l)).cloned().collect();
    let c = cosine_dsm(&table, &present)?;
    c.dsm.save_csv(&opts.out)?;
    Ok(BaselineSummary {
        items: present.len(),
        missing,
        halved: c.halved,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub ratings: PathBuf,
    /// Fixes the row order; otherwise first appearance in the CSV.
    pub labels: Option<Vec<String>>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub participants: Vec<String>,
    pub items: usize,
    pub source_sha256: String,
}

/// Human slider ratings to one DSM per participant plus the group average,
/// laid out as a cohort directory.
pub fn cmd_ingest_human(opts: &IngestOptions) -> Result<IngestSummary> {
    let bytes = std::fs::read(&opts.ratings).map_err(|e| Error::io(&opts.ratings, e))?;
    let ratings = read_human_ratings(bytes.as_slice())?;
    let matrices = human_rating_matrices(&ratings, opts.labels.as_deref())?;
    let mut dsms = Vec::new();
    for (p, m) in &matrices {
        let d = mirror_human(m).map_err(|e| Error::Dsm(format!("participant {p}: {e}")))?;
        d.save_csv(&opts.out_dir.join("dsms").join(format!("{}.csv", file_stem(p))))?;
        dsms.push(d);
    }
    let group = group_average(&dsms)?;
    group.dsm.save_csv(&opts.out_dir.join("group.csv"))?;
    let summary = IngestSummary {
        participants: matrices.keys().cloned().collect(),
        items: group.dsm.n(),
        source_sha256: sha256_hex(&bytes),
    };
    write_atomic(
        &opts.out_dir.join("cohort.json"),
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizOptions {
    pub systems: Vec<SystemInput>,
    pub tsne: Option<TsneParams>,
    pub fill: f64,
    pub bins: usize,
    pub out_dir: PathBuf,
}

/// Heatmaps and histograms per system, plus an optional cohort scatter.
/// Returns the files written.
pub fn cmd_viz(opts: &VizOptions) -> Result<Vec<PathBuf>> {
    let mut systems = Vec::new();
    for s in &opts.systems {
        systems.extend(load_system(s)?);
    }
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<()> {
        write_text(&path, &text)?;
        written.push(path);
        Ok(())
    };
    for s in &systems {
        let stem = file_stem(&s.name);
        let filled = fill_missing(&s.group, opts.fill)?;
        put(opts.out_dir.join(format!("{stem}_heatmap.svg")), heatmap_svg(&filled)?)?;
        if !s.ratings.is_empty() {
            let h = rating_histogram(&s.ratings, opts.bins)?;
            put(opts.out_dir.join(format!("{stem}_histogram.csv")), h.to_csv())?;
            put(opts.out_dir.join(format!("{stem}_histogram.svg")), h.to_svg(&s.name))?;
        }
    }
    if let Some(params) = &opts.tsne {
        let (layout, groups, _) = cohort_layout(&systems, params, opts.fill)?;
        put(opts.out_dir.join("tsne_layout.csv"), layout.to_csv(&groups))?;
        put(opts.out_dir.join("tsne_scatter.svg"), cohort_scatter(&layout, &groups)?)?;
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRow {
    pub temperature: f64,
    pub participant: String,
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: Option<f64>,
    pub counts: StatusCounts,
    /// Share of sent trials that did not yield a usable answer.
    pub noncompliance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub manifest_hash: String,
    pub model: String,
    pub rows: Vec<UsageRow>,
    pub total_cost: Option<f64>,
    pub mean_cost_per_participant: Option<f64>,
    pub noncompliance_rate: f64,
}

impl UsageReport {
    pub fn to_markdown(&self) -> String {
        let money = |c: Option<f64>| c.map_or("n/a".to_string(), |c| format!("${c:.4}"));
        let mut s = format!(
            "# Usage report\n\nrun {}, model {}\n\n| temperature | participant | requests | prompt tokens | completion tokens | cost | noncompliant | filtered | transport errors | rate |\n|---|---|---|---|---|---|---|---|---|---|\n",
            &self.manifest_hash[..16.min(self.manifest_hash.len())],
            self.model
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.4} |",
                r.temperature,
                r.participant,
                r.requests,
                r.prompt_tokens,
                r.completion_tokens,
                money(r.cost),
                r.counts.noncompliant,
                r.counts.content_filtered,
                r.counts.transport_error,
                r.noncompliance_rate
            );
        }
        let _ = writeln!(
            s,
            "\nTotal cost {}; mean per participant {}; overall noncompliance {:.4}.",
            money(self.total_cost),
            money(self.mean_cost_per_participant),
            self.noncompliance_rate
        );
        s
    }
}

/// Token, cost and noncompliance accounting for a run directory. Prices come
/// from `prices` or else the run config's price file.
pub fn cmd_report(run_dir: &Path, prices: Option<&Path>) -> Result<UsageReport> {
    let m = RunManifest::load(run_dir)?;
    let table = match (prices, &m.config.prices) {
        (Some(p), _) => Some(PriceTable::load(p)?),
        (None, Some(p)) => Some(PriceTable::load(&m.config.resolve(p))?),
        (None, None) => None,
    };
    let model = m.config.backend.model.clone();
    let price = table.as_ref().and_then(|t| t.get(&model));
    if table.is_some() && price.is_none() {
        log::warn!("no price for model {model}");
    }
    let mut rows = Vec::new();
    let mut ledger = UsageLedger::default();
    let (mut bad, mut sent) = (0usize, 0usize);
    for run in &m.runs {
        for p in &run.participants {
            let path = run_dir.join(&p.transcript);
            let records = if path.exists() { read_transcript(&path)? } else { Vec::new() };
            let mut one = UsageLedger::default();
            one.add(&p.key, &records, price);
            let u = one.participants.remove(&p.key).unwrap_or_default();
            let counts = StatusCounts::from_records(&records);
            let failed = counts.noncompliant + counts.content_filtered;
            let attempted = counts.total() - counts.skipped;
            bad += failed;
            sent += attempted;
            rows.push(UsageRow {
                temperature: run.temperature,
                participant: p.key.clone(),
                requests: u.requests,
                prompt_tokens: u.usage.prompt_tokens,
                completion_tokens: u.usage.completion_tokens,
                cost: u.cost,
                counts,
                noncompliance_rate: if attempted > 0 { failed as f64 / attempted as f64 } else { 0.0 },
            });
            ledger.participants.insert(format!("{}/{}", run.dir, p.key), u);
        }
    }
    let report = UsageReport {
        manifest_hash: m.hash.clone(),
        model,
        rows,
        total_cost: ledger.total().cost,
        mean_cost_per_participant: ledger.mean_cost(),
        noncompliance_rate: if sent > 0 { bad as f64 / sent as f64 } else { 0.0 },
    };
    write_text(&run_dir.join("usage.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_text(&run_dir.join("usage.md"), &report.to_markdown())?;
    Ok(report)
}
