//! PCA, exact t-SNE, and SVG/CSV figure output.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsm::Dsm;
use crate::error::{Error, Result};

/// Principal component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// N × k scores, row-major.
    pub scores: Vec<Vec<f64>>,
    /// Variance along each component, descending.
    pub explained_variance: Vec<f64>,
    pub explained_ratio: Vec<f64>,
}

fn check_rows(data: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = data.len();
    let d = data.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(Error::Viz("empty data".into()));
    }
    if data.iter().any(|r| r.len() != d) {
        return Err(Error::Viz("rows have different lengths".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Viz("non-finite value in data".into()));
    }
    Ok((n, d))
}

/// Project column-centered `data` onto its top `k` principal components.
/// Each component's sign is fixed so its largest-magnitude score is positive.
pub fn pca(data: &[Vec<f64>], k: usize) -> Result<Pca> {
    let (n, d) = check_rows(data)?;
    if k == 0 || k > n.min(d) {
        return Err(Error::Viz(format!("k = {k} must be in 1..={}", n.min(d))));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| data[i][j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let denom = (n.max(2) - 1) as f64;
    // eigenvalues of X^T X and X X^T agree; use the smaller matrix
    let (values, scores_of) = if n < d {
        let gram = &x * x.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues);
        let vals: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
        let scores: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| {
                let s = eig.eigenvalues[c].max(0.0).sqrt();
                eig.eigenvectors.column(c).iter().map(|u| u * s).collect()
            })
            .collect();
        (vals, scores)
    } else {
        let cov = x.transpose() * &x;
        let eig = SymmetricEigen::new(cov);
        let order = descending(&eig.eigenvalues);
        let vals: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
        let scores: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| (&x * eig.eigenvectors.column(c)).iter().copied().collect())
            .collect();
        (vals, scores)
    };
    let total: f64 = values.iter().sum();
    let mut cols: Vec<Vec<f64>> = scores_of.into_iter().take(k).collect();
    for col in &mut cols {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(Pca {
        scores: (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect(),
        explained_variance: values.iter().take(k).map(|v| v / denom).collect(),
        explained_ratio: values
            .iter()
            .take(k)
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect(),
    })
}

fn descending(values: &nalgebra::DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

fn sq_distances(data: &[Vec<f64>]) -> Vec<f64> {
    let n = data.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = data[i].iter().zip(&data[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

pub const PERPLEXITY_TOLERANCE: f64 = 1e-5;

/// Row-conditional affinities `p_{j|i}` whose entropy (natural log) is
/// within [`PERPLEXITY_TOLERANCE`] of `ln(perplexity)`. Returns the N × N
/// row-major matrix and each row's entropy.
pub fn conditional_affinities(sq_dist: &[f64], n: usize, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = &sq_dist[i * n..(i + 1) * n];
            let mut beta = 1.0;
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut row = vec![0.0; n];
            let mut entropy = 0.0;
            for _ in 0..200 {
                // shift by the smallest distance for numerical stability
                let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
                let mut sum = 0.0;
                let mut weighted = 0.0;
                for j in 0..n {
                    row[j] = if j == i { 0.0 } else { (-(d[j] - dmin) * beta).exp() };
                    sum += row[j];
                    weighted += (d[j] - dmin) * row[j];
                }
                entropy = sum.ln() + beta * weighted / sum;
                row.iter_mut().for_each(|p| *p /= sum);
                let diff = entropy - target;
                if diff.abs() <= PERPLEXITY_TOLERANCE {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
                }
            }
            (row, entropy)
        })
        .collect();
    let mut p = Vec::with_capacity(n * n);
    let mut h = Vec::with_capacity(n);
    for (row, e) in rows {
        p.extend(row);
        h.push(e);
    }
    (p, h)
}

/// Symmetrized joint affinities `(P + Pᵀ) / 2N`, floored at 1e-12.
pub fn joint_affinities(data: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = data.len();
    let (cond, _) = conditional_affinities(&sq_distances(data), n, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    p
}

/// KL(P‖Q) for layout `y` (N × 2 row-major) and its gradient.
pub fn tsne_objective(p: &[f64], y: &[f64], n: usize, exaggeration: f64) -> (f64, Vec<f64>) {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    let z: f64 = w.iter().sum();
    let grad: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let wij = w[i * n + j];
                let coeff = 4.0 * (exaggeration * p[i * n + j] - wij / z) * wij;
                gx += coeff * (y[2 * i] - y[2 * j]);
                gy += coeff * (y[2 * i + 1] - y[2 * j + 1]);
            }
            [gx, gy]
        })
        .collect();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = exaggeration * p[i * n + j];
                kl += pij * (pij / (w[i * n + j] / z)).ln();
            }
        }
    }
    (kl, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsneInit {
    Pca,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneParams {
    pub perplexity: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub min_gain: f64,
    pub init: TsneInit,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            max_iter: 5000,
            seed: 0,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            min_gain: 0.01,
            init: TsneInit::Pca,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLayout {
    pub labels: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub params: TsneParams,
    pub kl_divergence: f64,
}

impl EmbeddingLayout {
    /// `label,group,x,y` rows; `groups` maps label to group.
    pub fn to_csv(&self, groups: &HashMap<String, String>) -> String {
        let mut out = String::from("label,group,x,y\n");
        for (l, c) in self.labels.iter().zip(&self.coords) {
            let g = groups.get(l).map(String::as_str).unwrap_or("");
            let _ = writeln!(out, "{},{},{},{}", csv_field(l), csv_field(g), c[0], c[1]);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Exact t-SNE to two dimensions.
pub fn tsne(labels: &[String], data: &[Vec<f64>], params: &TsneParams) -> Result<EmbeddingLayout> {
    let (n, _) = check_rows(data)?;
    if labels.len() != n {
        return Err(Error::Viz(format!("{} labels for {n} rows", labels.len())));
    }
    if n < 4 {
        return Err(Error::Viz(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(params.perplexity > 0.0 && params.perplexity < n as f64) {
        return Err(Error::Viz(format!(
            "perplexity {} must be below the number of points ({n})",
            params.perplexity
        )));
    }
    let p = joint_affinities(data, params.perplexity);

    let mut y: Vec<f64> = match params.init {
        TsneInit::Pca => {
            let k = 2.min(data[0].len());
            let proj = pca(data, k)?;
            let mut y: Vec<f64> = proj
                .scores
                .iter()
                .flat_map(|r| [r[0], r.get(1).copied().unwrap_or(0.0)])
                .collect();
            let col0: Vec<f64> = y.iter().step_by(2).copied().collect();
            let mean = col0.iter().sum::<f64>() / n as f64;
            let sd = (col0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            let scale = if sd > 0.0 { 1e-4 / sd } else { 1.0 };
            y.iter_mut().for_each(|v| *v *= scale);
            y
        }
        TsneInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            (0..2 * n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    1e-4 * z
                })
                .collect()
        }
    };

    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0; 2 * n];
    for iter in 0..params.max_iter {
        let exaggeration = if iter < params.exaggeration_iters {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < params.momentum_switch_iter {
            params.initial_momentum
        } else {
            params.final_momentum
        };
        let (_, grad) = tsne_objective(&p, &y, n, exaggeration);
        for k in 0..2 * n {
            let g: f64 = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                gains[k] * 0.8
            };
            gains[k] = g.max(params.min_gain);
            update[k] = momentum * update[k] - params.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
    }
    let (kl, _) = tsne_objective(&p, &y, n, 1.0);
    let coords: Vec<[f64; 2]> = (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect();
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Viz("t-SNE diverged".into()));
    }
    Ok(EmbeddingLayout {
        labels: labels.to_vec(),
        coords,
        params: *params,
        kl_divergence: kl,
    })
}

/// How well a layout keeps each point's `k` nearest input neighbours (1 is
/// perfect).
pub fn trustworthiness(input: &[Vec<f64>], output: &[Vec<f64>], k: usize) -> Result<f64> {
    let (n, _) = check_rows(input)?;
    check_rows(output)?;
    if output.len() != n {
        return Err(Error::Viz("input and output differ in length".into()));
    }
    if k == 0 || 2 * k >= n {
        return Err(Error::Viz(format!("k = {k} must satisfy 0 < k < n/2 for n = {n}")));
    }
    let din = sq_distances(input);
    let dout = sq_distances(output);
    let order = |d: &[f64], i: usize| {
        let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        idx.sort_by(|&a, &b| d[i * n + a].total_cmp(&d[i * n + b]).then(a.cmp(&b)));
        idx
    };
    let mut penalty = 0.0;
    for i in 0..n {
        let in_order = order(&din, i);
        let mut rank = vec![0usize; n];
        for (r, &j) in in_order.iter().enumerate() {
            rank[j] = r + 1;
        }
        for &j in order(&dout, i).iter().take(k) {
            if rank[j] > k {
                penalty += (rank[j] - k) as f64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Map `t` in [0, 1] to a dark-blue → teal → yellow ramp.
pub fn ramp(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    let k = STOPS.iter().position(|(s, _)| *s >= t).unwrap_or(4).max(1);
    let (t0, c0) = STOPS[k - 1];
    let (t1, c1) = STOPS[k];
    let f = (t - t0) / (t1 - t0);
    let c: Vec<u8> = (0..3).map(|i| (c0[i] + f * (c1[i] - c0[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// DSM heatmap with item labels and a 0–1 colour legend. Missing cells must
/// be filled first.
pub fn heatmap_svg(d: &Dsm) -> Result<String> {
    if !d.is_complete() {
        return Err(Error::Viz(format!(
            "{} missing cells; fill them before drawing",
            d.missing_off_diagonal()
        )));
    }
    let n = d.n();
    let cell = if n > 40 { 10.0 } else { 20.0 };
    let margin = 8.0 * d.labels().iter().map(|l| l.chars().count()).max().unwrap_or(1) as f64 + 10.0;
    let grid = cell * n as f64;
    let (w, h) = (margin + grid + 90.0, margin + grid + 10.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="{}">"#,
        cell * 0.7
    );
    let _ = writeln!(s, r#"<g class="cells">"#);
    for i in 0..n {
        for j in 0..n {
            let v = d.get(i, j).expect("complete");
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"><title>{} / {}: {v:.3}</title></rect>"#,
                margin + j as f64 * cell,
                margin + i as f64 * cell,
                ramp(v),
                xml_escape(&d.labels()[i]),
                xml_escape(&d.labels()[j])
            );
        }
    }
    let _ = writeln!(s, "</g>");
    for (i, l) in d.labels().iter().enumerate() {
        let c = margin + (i as f64 + 0.75) * cell;
        let _ = writeln!(s, r#"<text x="{}" y="{c}" text-anchor="end">{}</text>"#, margin - 3.0, xml_escape(l));
        let _ = writeln!(
            s,
            r#"<text transform="translate({c},{}) rotate(-90)">{}</text>"#,
            margin - 3.0,
            xml_escape(l)
        );
    }
    legend(&mut s, margin + grid + 20.0, margin, grid.max(100.0));
    s.push_str("</svg>\n");
    Ok(s)
}

fn legend(s: &mut String, x: f64, y: f64, height: f64) {
    let _ = writeln!(s, r#"<g class="legend"><defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0">"#);
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let _ = writeln!(s, r#"<stop offset="{t}" stop-color="{}"/>"#, ramp(t));
    }
    let _ = writeln!(
        s,
        r#"</linearGradient></defs><rect x="{x}" y="{y}" width="15" height="{height}" fill="url(#ramp)"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10">1 (dissimilar)</text>"#, x + 18.0, y + 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10">0</text>"#, x + 18.0, y + height);
    let _ = writeln!(s, "</g>");
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Fixed-width bins over [0, 100]; the last bin includes 100.
pub fn rating_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Viz("bins must be >= 1".into()));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=100.0).contains(*v)) {
        return Err(Error::Viz(format!("rating {v} outside [0, 100]")));
    }
    let width = 100.0 / bins as f64;
    let mut counts = vec![0u64; bins];
    for v in values {
        let b = ((v / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram {
        edges: (0..=bins).map(|k| k as f64 * width).collect(),
        counts,
    })
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{c}", self.edges[k], self.edges[k + 1]);
        }
        out
    }

    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, pad) = (420.0, 260.0, 30.0);
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bw = (w - 2.0 * pad) / self.counts.len() as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="{pad}" y="16">{}</text>"#, xml_escape(title));
        for (k, &c) in self.counts.iter().enumerate() {
            let bh = (h - 2.0 * pad) * c as f64 / max;
            let _ = writeln!(
                s,
                r##"<rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#3b528b"><title>{}–{}: {c}</title></rect>"##,
                pad + k as f64 * bw,
                h - pad - bh,
                bw * 0.9,
                self.edges[k],
                self.edges[k + 1]
            );
        }
        let _ = writeln!(s, r#"<text x="{pad}" y="{}">0</text>"#, h - 12.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">100</text>"#, w - pad, h - 12.0);
        s.push_str("</svg>\n");
        s
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// One circle per point coloured by group, with a legend entry per group.
pub fn cohort_scatter(layout: &EmbeddingLayout, groups: &HashMap<String, String>) -> Result<String> {
    if layout.coords.is_empty() {
        return Err(Error::Viz("empty layout".into()));
    }
    let mut names: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &layout.labels {
        let g = groups
            .get(l)
            .ok_or_else(|| Error::Viz(format!("point {l:?} has no group")))?;
        let next = names.len();
        names.entry(g.as_str()).or_insert(next);
    }
    // stable colours: order groups alphabetically
    let colour: HashMap<&str, &str> = names
        .keys()
        .enumerate()
        .map(|(k, g)| (*g, PALETTE[k % PALETTE.len()]))
        .collect();
    let (w, h, pad, legend_w) = (480.0, 400.0, 20.0, 140.0);
    let xs = layout.coords.iter().map(|c| c[0]);
    let ys = layout.coords.iter().map(|c| c[1]);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let sx = |v: f64| pad + (w - legend_w - 2.0 * pad) * if x1 > x0 { (v - x0) / (x1 - x0) } else { 0.5 };
    let sy = |v: f64| h - pad - (h - 2.0 * pad) * if y1 > y0 { (v - y0) / (y1 - y0) } else { 0.5 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    for (l, c) in layout.labels.iter().zip(&layout.coords) {
        let g = groups[l].as_str();
        let _ = writeln!(
            s,
            r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="4" fill="{}"><title>{}</title></circle>"#,
            sx(c[0]),
            sy(c[1]),
            colour[g],
            xml_escape(l)
        );
    }
    for (k, g) in names.keys().enumerate() {
        let y = pad + 16.0 * k as f64;
        let x = w - legend_w + 10.0;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><circle cx="{x}" cy="{y}" r="4" fill="{}"/><text x="{}" y="{}">{}</text></g>"#,
            colour[g],
            x + 8.0,
            y + 4.0,
            xml_escape(g)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Write text to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
