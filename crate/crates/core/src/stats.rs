//! Rank statistics, agreement and alignment reports.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::cohort::derive_seed;
use crate::corpus::{category_masks_for, PairMask, StimulusSet};
use crate::dsm::{group_average, paired_vectors, Dsm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("undefined correlation: constant vector")]
    UndefinedCorrelation,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, StatsError>;

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Ranks 1..n; ties share the mean of their rank block.
pub fn average_ranks(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(x)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let mid = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    Ok(ranks)
}

/// Centered values and their sum of squares.
fn centered(x: &[f64]) -> (Vec<f64>, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss = c.iter().map(|v| v * v).sum::<f64>();
    (c, ss)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    let (cx, sx) = centered(x);
    let (cy, sy) = centered(y);
    if sx == 0.0 || sy == 0.0 {
        return Err(StatsError::UndefinedCorrelation);
    }
    let dot: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum();
    // one square root keeps identical and reversed rankings at exactly ±1
    Ok((dot / (sx * sy).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: x.len() });
    }
    Ok(())
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x)?, &average_ranks(y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PValueMethod {
    /// t-approximation for n >= 50, otherwise 10,000 seeded permutations.
    Auto { seed: u64 },
    Permutation { n_perm: usize, seed: u64 },
    /// Every permutation; only for n <= 10.
    Exhaustive,
    TApprox,
}

impl Default for PValueMethod {
    fn default() -> Self {
        PValueMethod::Auto { seed: 0 }
    }
}

impl PValueMethod {
    pub const AUTO_T_THRESHOLD: usize = 50;
    pub const DEFAULT_PERMUTATIONS: usize = 10_000;

    /// The concrete method used for `n` observations.
    pub fn resolve(self, n: usize) -> PValueMethod {
        match self {
            PValueMethod::Auto { .. } if n >= Self::AUTO_T_THRESHOLD => PValueMethod::TApprox,
            PValueMethod::Auto { seed } => PValueMethod::Permutation {
                n_perm: Self::DEFAULT_PERMUTATIONS,
                seed,
            },
            other => other,
        }
    }

    pub fn label(self) -> String {
        match self {
            PValueMethod::Auto { .. } => "auto".into(),
            PValueMethod::Permutation { n_perm, .. } => format!("permutation({n_perm})"),
            PValueMethod::Exhaustive => "exhaustive".into(),
            PValueMethod::TApprox => "t_approx".into(),
        }
    }
}

/// Tolerance for counting a permuted statistic as "at least as extreme".
const EXTREME_EPS: f64 = 1e-12;
const PERM_BLOCK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanTest {
    pub r_s: f64,
    pub p: f64,
    pub method: String,
    pub n: usize,
}

pub fn spearman_test(x: &[f64], y: &[f64], method: PValueMethod) -> Result<SpearmanTest> {
    check_pair(x, y)?;
    let rx = average_ranks(x)?;
    let ry = average_ranks(y)?;
    let r = pearson(&rx, &ry)?;
    let n = x.len();
    let resolved = method.resolve(n);
    let p = match resolved {
        PValueMethod::TApprox => t_approx_p(r, n),
        PValueMethod::Permutation { n_perm, seed } => {
            if n_perm == 0 {
                return Err(StatsError::Invalid("n_perm must be >= 1".into()));
            }
            permutation_p(&rx, &ry, r, n_perm, seed)
        }
        PValueMethod::Exhaustive => exhaustive_p(&rx, &ry, r)?,
        PValueMethod::Auto { .. } => unreachable!("resolved above"),
    };
    Ok(SpearmanTest {
        r_s: r,
        p,
        method: resolved.label(),
        n,
    })
}

pub fn spearman_pvalue(x: &[f64], y: &[f64], method: PValueMethod) -> Result<f64> {
    spearman_test(x, y, method).map(|t| t.p)
}

fn t_approx_p(r: f64, n: usize) -> f64 {
    if n <= 2 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn corr_of_ranks(cx: &[f64], cy_perm: impl Iterator<Item = f64>, denom: f64) -> f64 {
    cx.iter().zip(cy_perm).map(|(a, b)| a * b).sum::<f64>() / denom
}

fn permutation_p(rx: &[f64], ry: &[f64], r_obs: f64, n_perm: usize, seed: u64) -> f64 {
    let (cx, sx) = centered(rx);
    let (cy, sy) = centered(ry);
    let denom = (sx * sy).sqrt();
    let threshold = r_obs.abs() - EXTREME_EPS;
    let blocks = n_perm.div_ceil(PERM_BLOCK);
    let hits: usize = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = PERM_BLOCK.min(n_perm - b * PERM_BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("perm-block:{b}")));
            let mut idx: Vec<usize> = (0..cy.len()).collect();
            let mut hits = 0;
            for _ in 0..count {
                idx.shuffle(&mut rng);
                let r = corr_of_ranks(&cx, idx.iter().map(|&i| cy[i]), denom);
                if r.abs() >= threshold {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    (1 + hits) as f64 / (n_perm + 1) as f64
}

/// Exact p over all n! orderings (Heap's algorithm).
fn exhaustive_p(rx: &[f64], ry: &[f64], r_obs: f64) -> Result<f64> {
    let n = rx.len();
    if n > 10 {
        return Err(StatsError::Invalid(format!("exhaustive permutation needs n <= 10, got {n}")));
    }
    let (cx, sx) = centered(rx);
    let (cy, sy) = centered(ry);
    let denom = (sx * sy).sqrt();
    let threshold = r_obs.abs() - EXTREME_EPS;
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut total = 0u64;
    let mut hits = 0u64;
    let mut visit = |a: &[usize]| {
        total += 1;
        if corr_of_ranks(&cx, a.iter().map(|&i| cy[i]), denom).abs() >= threshold {
            hits += 1;
        }
    };
    visit(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            visit(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bonferroni {
    pub significant: bool,
    pub threshold: f64,
}

/// Significant iff `p < alpha / m`.
pub fn bonferroni(p: f64, m: usize, alpha: f64) -> Result<Bonferroni> {
    if m == 0 {
        return Err(StatsError::Invalid("m must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(StatsError::Invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let threshold = alpha / m as f64;
    Ok(Bonferroni {
        significant: p < threshold,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestReport {
    /// Rank-sum of the first sample in the pooled mid-ranking.
    pub w: f64,
    pub p_two_sided: f64,
    pub method: RankTestMethod,
    pub n1: usize,
    pub n2: usize,
}

impl RankTestReport {
    /// The Mann-Whitney form `W − n1(n1+1)/2` that R's `wilcox.test` prints.
    pub fn u_statistic(&self) -> f64 {
        self.w - (self.n1 * (self.n1 + 1)) as f64 / 2.0
    }
}

pub const WILCOXON_EXACT_MAX: usize = 12;

/// Two-sided Wilcoxon rank-sum test; exact when both samples have at most
/// 12 values, otherwise the tie- and continuity-corrected normal
/// approximation.
pub fn wilcoxon_ranksum(a: &[f64], b: &[f64]) -> Result<RankTestReport> {
    let method = if a.len() <= WILCOXON_EXACT_MAX && b.len() <= WILCOXON_EXACT_MAX {
        RankTestMethod::Exact
    } else {
        RankTestMethod::NormalApprox
    };
    wilcoxon_ranksum_with(a, b, method)
}

pub fn wilcoxon_ranksum_with(a: &[f64], b: &[f64], method: RankTestMethod) -> Result<RankTestReport> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled)?;
    let (n1, n2) = (a.len(), b.len());
    let w: f64 = ranks[..n1].iter().sum();
    let p = match method {
        RankTestMethod::Exact => exact_ranksum_p(&ranks, n1, w)?,
        RankTestMethod::NormalApprox => normal_ranksum_p(&pooled, n1, n2, w),
    };
    Ok(RankTestReport {
        w,
        p_two_sided: p,
        method,
        n1,
        n2,
    })
}

/// Distribution of the first-sample rank-sum over all C(N, n1) splits,
/// counted with doubled mid-ranks so every sum is an integer.
fn exact_ranksum_p(ranks: &[f64], n1: usize, w: f64) -> Result<f64> {
    if ranks.len() > 40 {
        return Err(StatsError::Invalid("exact rank-sum limited to 40 values".into()));
    }
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled sum s
    let mut counts = vec![vec![0f64; max_sum + 1]; n1 + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            for s in (r..=max_sum).rev() {
                let add = counts[k - 1][s - r];
                if add != 0.0 {
                    counts[k][s] += add;
                }
            }
        }
    }
    // two-sided: splits at least as far from the null mean as observed;
    // with ties the null is not symmetric, so doubling a tail would differ
    let target = (2.0 * w).round() as i64;
    let centre = (n1 * (ranks.len() + 1)) as i64;
    let dev = (target - centre).abs();
    let dist = &counts[n1];
    let total: f64 = dist.iter().sum();
    let extreme: f64 = dist
        .iter()
        .enumerate()
        .filter(|&(s, _)| (s as i64 - centre).abs() >= dev)
        .map(|(_, c)| c)
        .sum();
    Ok((extreme / total).min(1.0))
}

fn normal_ranksum_p(pooled: &[f64], n1: usize, n2: usize, w: f64) -> f64 {
    let n = (n1 + n2) as f64;
    let mean = n1 as f64 * (n + 1.0) / 2.0;
    let mut ties: HashMap<u64, usize> = HashMap::new();
    for v in pooled {
        *ties.entry(v.to_bits()).or_default() += 1;
    }
    let tie_term: f64 = ties.values().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = n1 as f64 * n2 as f64 / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return 1.0;
    }
    let diff = w - mean;
    let correction = 0.5 * diff.signum() * f64::from(diff != 0.0);
    let z = (diff - correction) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * std.cdf(z).min(std.sf(z))).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccReport {
    pub icc_single: f64,
    pub icc_average: f64,
    pub model: String,
    pub subjects: usize,
    pub raters: usize,
    pub msr: f64,
    pub msc: f64,
    pub mse: f64,
    /// Subjects removed because a rater had no value.
    pub dropped_subjects: usize,
}

/// Two-way random-effects, absolute-agreement ICC over a complete
/// subjects × raters matrix (rows are subjects).
pub fn icc_two_way(rows: &[Vec<f64>]) -> Result<IccReport> {
    let n = rows.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let k = rows[0].len();
    if k < 2 {
        return Err(StatsError::TooFew { needed: 2, got: k });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != k) {
        return Err(StatsError::LengthMismatch(k, r.len()));
    }
    for r in rows {
        check_finite(r)?;
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = rows.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let ssr = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ssc = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let sse: f64 = rows
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            let (rm, cm) = (row_means[i], &col_means);
            r.iter().enumerate().map(move |(j, x)| (x - rm - cm[j] + grand).powi(2))
        })
        .sum();
    let msr = ssr / (nf - 1.0);
    let msc = ssc / (kf - 1.0);
    let mse = sse / ((nf - 1.0) * (kf - 1.0));
    let single_den = msr + (kf - 1.0) * mse + kf * (msc - mse) / nf;
    let average_den = msr + (msc - mse) / nf;
    if single_den == 0.0 || average_den == 0.0 {
        return Err(StatsError::Invalid("ICC undefined: no variance".into()));
    }
    Ok(IccReport {
        icc_single: (msr - mse) / single_den,
        icc_average: (msr - mse) / average_den,
        model: "two-way random, absolute agreement".into(),
        subjects: n,
        raters: k,
        msr,
        msc,
        mse,
        dropped_subjects: 0,
    })
}

/// ICC with subjects = unordered item pairs and raters = participants, on
/// similarities `100·(1 − d)`. Pairs missing for any participant are dropped.
pub fn cohort_icc(dsms: &[Dsm]) -> std::result::Result<IccReport, crate::error::Error> {
    let first = dsms.first().ok_or(StatsError::Empty)?;
    if dsms.iter().any(|d| d.labels() != first.labels()) {
        return Err(crate::error::Error::Dsm("ICC inputs have different labels".into()));
    }
    let n = first.n();
    let mut rows = Vec::new();
    let mut dropped = 0;
    for i in 1..n {
        for j in 0..i {
            let row: Option<Vec<f64>> = dsms.iter().map(|d| d.get(i, j).map(|v| 100.0 * (1.0 - v))).collect();
            match row {
                Some(r) => rows.push(r),
                None => dropped += 1,
            }
        }
    }
    let mut report = icc_two_way(&rows)?;
    report.dropped_subjects = dropped;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    Some(Summary {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        median: median(values)?,
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterSubjectReport {
    pub participants: Vec<String>,
    /// Symmetric, unit diagonal; `None` where fewer than 3 common pairs.
    pub pairwise: Vec<Vec<Option<f64>>>,
    /// Each participant against the average of the others.
    pub leave_one_out: Vec<Option<f64>>,
    pub pairwise_summary: Option<Summary>,
    pub leave_one_out_summary: Option<Summary>,
    pub unavailable: Vec<String>,
}

impl InterSubjectReport {
    pub fn pairwise_values(&self) -> Vec<f64> {
        let n = self.participants.len();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter_map(|(i, j)| self.pairwise[i][j])
            .collect()
    }
}

fn pair_r(a: &Dsm, b: &Dsm) -> std::result::Result<f64, String> {
    let (x, y) = paired_vectors(a, b, None).map_err(|e| e.to_string())?;
    spearman(&x, &y).map_err(|e| e.to_string())
}

pub fn inter_subject(names: &[String], dsms: &[Dsm]) -> std::result::Result<InterSubjectReport, crate::error::Error> {
    if dsms.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: dsms.len() }.into());
    }
    if names.len() != dsms.len() {
        return Err(StatsError::LengthMismatch(names.len(), dsms.len()).into());
    }
    let n = dsms.len();
    let mut pairwise = vec![vec![None; n]; n];
    let mut unavailable = Vec::new();
    let cells: Vec<((usize, usize), std::result::Result<f64, String>)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, j)| ((i, j), pair_r(&dsms[i], &dsms[j])))
        .collect();
    for i in 0..n {
        pairwise[i][i] = Some(1.0);
    }
    for ((i, j), r) in cells {
        match r {
            Ok(r) => {
                pairwise[i][j] = Some(r);
                pairwise[j][i] = Some(r);
            }
            Err(e) => unavailable.push(format!("{} vs {}: {e}", names[i], names[j])),
        }
    }
    let leave_one_out: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rest: Vec<Dsm> = (0..n).filter(|&j| j != i).map(|j| dsms[j].clone()).collect();
            let avg = group_average(&rest).map_err(|e| e.to_string())?;
            pair_r(&dsms[i], &avg.dsm)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(v) => Some(v),
            Err(e) => {
                unavailable.push(format!("{} vs rest: {e}", names[i]));
                None
            }
        })
        .collect();
    let mut report = InterSubjectReport {
        participants: names.to_vec(),
        pairwise,
        leave_one_out_summary: summarize(&leave_one_out.iter().flatten().copied().collect::<Vec<_>>()),
        leave_one_out,
        pairwise_summary: None,
        unavailable,
    };
    report.pairwise_summary = summarize(&report.pairwise_values());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub r_s: f64,
    pub p_raw: f64,
    pub p_method: String,
    pub m_comparisons: usize,
    pub alpha: f64,
    pub significant_bonferroni: bool,
    pub n_pairs_used: usize,
    pub mask_name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub method: PValueMethod,
    pub alpha: f64,
    pub m_comparisons: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            method: PValueMethod::default(),
            alpha: 0.05,
            m_comparisons: 1,
        }
    }
}

fn align(x: &[f64], y: &[f64], mask_name: Option<String>, opts: &CompareOptions) -> Result<AlignmentReport> {
    let t = spearman_test(x, y, opts.method)?;
    let b = bonferroni(t.p, opts.m_comparisons, opts.alpha)?;
    Ok(AlignmentReport {
        r_s: t.r_s,
        p_raw: t.p,
        p_method: t.method,
        m_comparisons: opts.m_comparisons,
        alpha: opts.alpha,
        significant_bonferroni: b.significant,
        n_pairs_used: x.len(),
        mask_name,
    })
}

/// Alignment between two DSMs on their common labels (in `a`'s order) and
/// common support. With `categories`, within- and between-category reports
/// follow the overall one.
pub fn compare_group(
    a: &Dsm,
    b: &Dsm,
    categories: Option<&StimulusSet>,
    opts: &CompareOptions,
) -> std::result::Result<Vec<AlignmentReport>, crate::error::Error> {
    compare_each(a, b, categories, opts)?.into_iter().collect()
}

/// Like [`compare_group`], but a mask that cannot be evaluated only fails
/// its own entry. The outer error is for DSMs that cannot be compared at all.
fn compare_each(
    a: &Dsm,
    b: &Dsm,
    categories: Option<&StimulusSet>,
    opts: &CompareOptions,
) -> std::result::Result<Vec<std::result::Result<AlignmentReport, crate::error::Error>>, crate::error::Error> {
    let labels = a.common_labels(b);
    if labels.len() < 3 {
        return Err(crate::error::Error::Dsm(format!(
            "only {} common items; need at least 3",
            labels.len()
        )));
    }
    let (a, b) = (a.restrict(&labels)?, b.restrict(&labels)?);
    let (x, y) = paired_vectors(&a, &b, None)?;
    let mut out = vec![align(&x, &y, None, opts).map_err(Into::into)];
    if let Some(set) = categories {
        let (within, between) = category_masks_for(&labels, set);
        for mask in [within, between] {
            out.push(masked(&a, &b, &mask, opts));
        }
    }
    Ok(out)
}

fn masked(a: &Dsm, b: &Dsm, mask: &PairMask, opts: &CompareOptions) -> std::result::Result<AlignmentReport, crate::error::Error> {
    let (x, y) = paired_vectors(a, b, Some(mask))?;
    Ok(align(&x, &y, Some(mask.name.clone()), opts)?)
}

/// C(n, 2).
pub fn default_comparisons(systems: usize) -> usize {
    (systems * systems.saturating_sub(1) / 2).max(1)
}

/// All-pairs alignment among named systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTable {
    pub systems: Vec<String>,
    /// Name of the mask, or None for all pairs.
    pub mask_name: Option<String>,
    /// Entries for i < j: a report or why it is unavailable.
    pub cells: Vec<AlignmentCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCell {
    pub a: usize,
    pub b: usize,
    pub report: Option<AlignmentReport>,
    pub unavailable: Option<String>,
}

impl AlignmentTable {
    pub fn get(&self, a: usize, b: usize) -> Option<&AlignmentCell> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.cells.iter().find(|c| c.a == a && c.b == b)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("system_a,system_b,mask,r_s,p_raw,p_method,m_comparisons,threshold,significant,n_pairs\n");
        let mask = self.mask_name.as_deref().unwrap_or("all");
        for c in &self.cells {
            let (a, b) = (&self.systems[c.a], &self.systems[c.b]);
            match &c.report {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "{a},{b},{mask},{:.6},{:.6e},{},{},{:.6e},{},{}",
                        r.r_s,
                        r.p_raw,
                        r.p_method,
                        r.m_comparisons,
                        r.alpha / r.m_comparisons as f64,
                        r.significant_bonferroni,
                        r.n_pairs_used
                    );
                }
                None => {
                    let _ = writeln!(out, "{a},{b},{mask},,,,,,,");
                }
            }
        }
        out
    }

    /// Systems × systems matrix of r_s; `*` marks Bonferroni significance.
    pub fn to_markdown(&self) -> String {
        let n = self.systems.len();
        let mut out = String::new();
        let _ = writeln!(out, "| | {} |", self.systems.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(n));
        for i in 0..n {
            let mut row = vec![self.systems[i].clone()];
            for j in 0..n {
                row.push(if i == j {
                    "1".into()
                } else {
                    match self.get(i, j).and_then(|c| c.report.as_ref()) {
                        Some(r) => format!("{:.3}{}", r.r_s, if r.significant_bonferroni { "*" } else { "" }),
                        None => "n/a".into(),
                    }
                });
            }
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
        out
    }
}

/// Alignment table over every pair of systems. Pairs with too little overlap
/// are marked unavailable instead of failing the table.
pub fn alignment_tables(
    names: &[String],
    dsms: &[Dsm],
    categories: Option<&StimulusSet>,
    opts: &CompareOptions,
) -> Vec<AlignmentTable> {
    let n = names.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let results: Vec<std::result::Result<Vec<std::result::Result<AlignmentReport, String>>, String>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            compare_each(&dsms[i], &dsms[j], categories, opts)
                .map(|v| v.into_iter().map(|r| r.map_err(|e| e.to_string())).collect())
                .map_err(|e| e.to_string())
        })
        .collect();
    let masks: Vec<Option<String>> = match categories {
        Some(_) => vec![None, Some("within".into()), Some("between".into())],
        None => vec![None],
    };
    masks
        .into_iter()
        .enumerate()
        .map(|(m, mask_name)| AlignmentTable {
            systems: names.to_vec(),
            mask_name,
            cells: pairs
                .iter()
                .zip(&results)
                .map(|(&(a, b), r)| match r.as_ref().map(|reports| &reports[m]) {
                    Ok(Ok(report)) => AlignmentCell {
                        a,
                        b,
                        report: Some(report.clone()),
                        unavailable: None,
                    },
                    Ok(Err(e)) | Err(e) => AlignmentCell {
                        a,
                        b,
                        report: None,
                        unavailable: Some(e.clone()),
                    },
                })
                .collect(),
        })
        .collect()
}
