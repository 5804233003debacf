//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod mock;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repalign::cohort::{derive_seed, Honorific, TaskKind};
use repalign::corpus::StimulusSet;
use repalign::dsm::Dsm;
use repalign::pipeline::{CohortSpec, ExperimentConfig, LatentSource, SyntheticSettings};

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn stimuli_path() -> PathBuf {
    crate_dir().join("data/stimuli.tsv")
}

/// The first `n` ids of the built-in roster.
pub fn first_items(n: usize) -> Vec<String> {
    StimulusSet::builtin().ids().into_iter().take(n).collect()
}

pub fn anonymous(n: usize) -> CohortSpec {
    CohortSpec {
        surnames: Vec::new(),
        honorifics: Vec::new(),
        anonymous_repeats: Some(n),
    }
}

pub fn named(surnames: &[&str], honorifics: &[Honorific]) -> CohortSpec {
    CohortSpec {
        surnames: surnames.iter().map(|s| s.to_string()).collect(),
        honorifics: honorifics.to_vec(),
        anonymous_repeats: None,
    }
}

/// A synthetic word-pair experiment over `items`.
pub fn word_config(out: &Path, items: Vec<String>, cohort: CohortSpec, synthetic: SyntheticSettings, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(stimuli_path(), TaskKind::WordWord, cohort, out);
    cfg.items = Some(items);
    cfg.synthetic = synthetic;
    cfg.base_seed = seed;
    cfg
}

pub fn settings(latent: LatentSource, offset: f64, noise: f64) -> SyntheticSettings {
    SyntheticSettings {
        latent,
        persona_offset_scale: offset,
        noise_scale: noise,
        ..SyntheticSettings::default()
    }
}

/// Seed the run uses for its latent geometry.
pub fn latent_seed(base_seed: u64) -> u64 {
    derive_seed(base_seed, "latent")
}

/// Uniform values with roughly a third replaced by earlier values so ties
/// are common.
pub fn tied_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) * 0.5).collect();
    for i in 1..n {
        if rng.random_bool(0.3) {
            v[i] = v[rng.random_range(0..i)];
        }
    }
    v
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
/// Quadratic on purpose: counts smaller and equal values directly.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}

/// Two-sided rank-sum p-value by enumerating every way to pick the first
/// sample's positions from the pooled ranks.
pub fn enumerated_ranksum_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = naive_ranks(&pooled);
    let n1 = a.len();
    let total = pooled.len();
    let observed: f64 = ranks[..n1].iter().sum();
    let expected = n1 as f64 * (total as f64 + 1.0) / 2.0;
    let dev = (observed - expected).abs();
    let (mut hits, mut count) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let w: f64 = (0..total).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        count += 1;
        if (w - expected).abs() >= dev - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / count as f64
}

/// ICC(2,1) and ICC(2,k) from the two-way ANOVA table, written out term by
/// term.
pub fn definitional_icc(rows: &[Vec<f64>]) -> (f64, f64) {
    let n = rows.len();
    let k = rows[0].len();
    let nf = n as f64;
    let kf = k as f64;
    let grand = rows.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ss_total: f64 = rows.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_rows: f64 = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols: f64 = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_err = ss_total - ss_rows - ss_cols;
    let msr = ss_rows / (nf - 1.0);
    let msc = ss_cols / (kf - 1.0);
    let mse = ss_err / ((nf - 1.0) * (kf - 1.0));
    let single = (msr - mse) / (msr + (kf - 1.0) * mse + kf * (msc - mse) / nf);
    let average = (msr - mse) / (msr + (msc - mse) / nf);
    (single, average)
}

/// Lower-triangle values of a complete DSM, row-major over i > j.
pub fn lower(d: &Dsm) -> Vec<f64> {
    let n = d.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..i {
            out.push(d.get(i, j).expect("complete DSM"));
        }
    }
    out
}

/// Gaussian blobs around `k` well separated centres in `dim` dimensions.
pub fn blobs(k: usize, per: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..dim).map(|d| if d == c { 12.0 } else { 0.0 }).collect())
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per {
            data.push(
                centre
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        m + z
                    })
                    .collect(),
            );
            labels.push(c);
        }
    }
    (data, labels)
}

/// Run every labelled reply in `fixtures/replies.jsonl` through the parser.
/// Returns the number of cases and a description of each mismatch.
pub fn check_reply_corpus() -> (usize, Vec<String>) {
    use repalign::parse::{extract_description, extract_ranking, extract_rating, Compliance};
    use serde_json::Value;

    let text = std::fs::read_to_string(crate_dir().join("fixtures/replies.jsonl")).expect("fixture corpus");
    let mut failures = Vec::new();
    let mut total = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        total += 1;
        let case: Value = serde_json::from_str(line).expect("valid fixture line");
        let id = case["id"].as_str().unwrap_or("?");
        let reply = case["reply"].as_str().expect("reply");
        let expect = &case["expect"];
        let parsed = match case["kind"].as_str() {
            Some("rating") => extract_rating(reply),
            Some("description") => extract_description(reply),
            Some("ranking") => {
                let ids = case["expected_ids"]
                    .as_array()
                    .expect("expected_ids")
                    .iter()
                    .map(|v| v.as_u64().unwrap())
                    .collect();
                extract_ranking(reply, &ids)
            }
            other => panic!("unknown kind {other:?}"),
        };
        let want: Compliance = serde_json::from_value(expect["compliance"].clone()).expect("compliance");
        let mut problems = Vec::new();
        if parsed.compliance != want {
            problems.push(format!("compliance {:?}, want {want:?}", parsed.compliance));
        }
        if let Some(r) = expect.get("rating") {
            if parsed.rating != r.as_f64() {
                problems.push(format!("rating {:?}, want {r}", parsed.rating));
            }
        }
        if let Some(r) = expect.get("ranking") {
            let want: Vec<u64> = serde_json::from_value(r.clone()).unwrap();
            if parsed.ranking.as_ref() != Some(&want) {
                problems.push(format!("ranking {:?}", parsed.ranking));
            }
        }
        if let Some(m) = expect.get("missing") {
            let want: Vec<u64> = serde_json::from_value(m.clone()).unwrap();
            if parsed.missing != want {
                problems.push(format!("missing {:?}, want {want:?}", parsed.missing));
            }
        }
        if !problems.is_empty() {
            failures.push(format!("{id}: {}", problems.join("; ")));
        }
    }
    (total, failures)
}

/// Human-format slider ratings (0-50, one order per pair) scattered around
/// `latent`, one block of rows per participant.
pub fn human_ratings_csv(latent: &Dsm, participants: usize, noise: f64, seed: u64) -> String {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let labels = latent.labels();
    let n = labels.len();
    let mut out = String::from("participant,item_a,item_b,raw_0_50\n");
    for p in 0..participants {
        for i in 0..n {
            for j in (i + 1)..n {
                let z: f64 = StandardNormal.sample(&mut r);
                let raw = (50.0 * (1.0 - latent.get(i, j).unwrap()) + noise * z).clamp(0.0, 50.0).round();
                let (a, b) = if r.random_bool(0.5) { (i, j) } else { (j, i) };
                out.push_str(&format!("h{p:02},{},{},{raw}\n", labels[a], labels[b]));
            }
        }
    }
    out
}

/// Word-vector text for `labels`: noisy copies of the rows of `points`.
pub fn word_vectors(labels: &[String], points: &[Vec<f64>], noise: f64, seed: u64) -> String {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let mut out = String::new();
    for (l, p) in labels.iter().zip(points) {
        out.push_str(l);
        for v in p {
            let z: f64 = StandardNormal.sample(&mut r);
            out.push_str(&format!(" {:.6}", v + noise * z));
        }
        out.push('\n');
    }
    out
}

pub fn args(list: &[&str]) -> Vec<std::ffi::OsString> {
    std::iter::once("repalign").chain(list.iter().copied()).map(Into::into).collect()
}

pub fn path_str(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}
