//! Rating matrices, dissimilarity matrices and cohort averages.
//!
//! Similarities live on a 0–100 scale; dissimilarities are `(100 - s) / 100`.
//! Analysis vectors are taken from the lower triangle without the diagonal.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PairMask;
use crate::error::{Error, Result};

/// Where a DSM cell's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Both ordered ratings (or a rated identical pair) contributed.
    Rated,
    /// Only one order was rated; the value stands in for both.
    Mirrored,
    DerivedFromEmbeddings,
    /// Constant fill for display.
    Filled,
}

/// Ordered-pair similarity ratings on the 0–100 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    labels: Vec<String>,
    cells: Vec<Option<f64>>,
}

impl RatingMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        RatingMatrix {
            labels,
            cells: vec![None; n * n],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.n() + j]
    }

    /// Fill an ordered cell. Returns false (and leaves the cell alone) when it
    /// was already filled.
    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<bool> {
        if !(0.0..=100.0).contains(&value) {
            return Err(Error::Dsm(format!("rating {value} outside [0, 100]")));
        }
        let n = self.n();
        let cell = &mut self.cells[i * n + j];
        if cell.is_some() {
            return Ok(false);
        }
        *cell = Some(value);
        Ok(true)
    }

    pub fn present(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// All present ratings in row-major order (histogram input).
    pub fn values(&self) -> Vec<f64> {
        self.cells.iter().flatten().copied().collect()
    }

    /// Mean |s(i,j) - s(j,i)| over unordered pairs rated in both orders.
    pub fn asymmetry(&self) -> Option<f64> {
        let n = self.n();
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                if let (Some(a), Some(b)) = (self.get(i, j), self.get(j, i)) {
                    total += (a - b).abs();
                    count += 1;
                }
            }
        }
        (count > 0).then(|| total / count as f64)
    }
}

/// Symmetric dissimilarity matrix with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dsm {
    labels: Vec<String>,
    values: Vec<Option<f64>>,
    sources: Vec<Option<Provenance>>,
}

impl Dsm {
    pub fn empty(labels: Vec<String>) -> Self {
        let n = labels.len();
        Dsm {
            labels,
            values: vec![None; n * n],
            sources: vec![None; n * n],
        }
    }

    /// Build from a dense row-major matrix. Checks symmetry, range and the
    /// zero diagonal.
    pub fn from_dense(labels: Vec<String>, dense: &[f64], source: Provenance) -> Result<Self> {
        let n = labels.len();
        if dense.len() != n * n {
            return Err(Error::Dsm(format!(
                "{} values for {n} labels",
                dense.len()
            )));
        }
        let mut d = Dsm::empty(labels);
        for i in 0..n {
            for j in 0..n {
                d.values[i * n + j] = Some(dense[i * n + j]);
                d.sources[i * n + j] = Some(source);
            }
        }
        d.validate()?;
        Ok(d)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n() + j]
    }

    pub fn provenance(&self, i: usize, j: usize) -> Option<Provenance> {
        self.sources[i * self.n() + j]
    }

    /// Set a single ordered cell; callers keep the matrix symmetric.
    pub fn set_cell(&mut self, i: usize, j: usize, value: Option<f64>, source: Provenance) {
        let n = self.n();
        self.values[i * n + j] = value;
        self.sources[i * n + j] = value.map(|_| source);
    }

    pub fn set_pair(&mut self, i: usize, j: usize, value: f64, source: Provenance) {
        self.set_cell(i, j, Some(value), source);
        self.set_cell(j, i, Some(value), source);
    }

    /// Number of absent off-diagonal cells.
    pub fn missing_off_diagonal(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j).is_none())
            .count()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        for i in 0..n {
            if let Some(v) = self.get(i, i) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Dsm(format!("diagonal {i} = {v} outside [0, 1]")));
                }
            }
            for j in (i + 1)..n {
                match (self.get(i, j), self.get(j, i)) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(Error::Dsm(format!(
                            "asymmetric cell ({}, {}): {a} vs {b}",
                            self.labels[i], self.labels[j]
                        )))
                    }
                    (Some(a), _) | (_, Some(a)) if !(0.0..=1.0).contains(&a) || !a.is_finite() => {
                        return Err(Error::Dsm(format!(
                            "cell ({}, {}) = {a} outside [0, 1]",
                            self.labels[i], self.labels[j]
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Reorder/subset to `labels`. Every label must exist.
    pub fn restrict(&self, labels: &[String]) -> Result<Dsm> {
        let index: HashMap<&str, usize> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let map: Vec<usize> = labels
            .iter()
            .map(|l| {
                index
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| Error::Dsm(format!("label {l:?} not in matrix")))
            })
            .collect::<Result<_>>()?;
        let mut out = Dsm::empty(labels.to_vec());
        for (a, &i) in map.iter().enumerate() {
            for (b, &j) in map.iter().enumerate() {
                let n = self.n();
                out.values[a * labels.len() + b] = self.values[i * n + j];
                out.sources[a * labels.len() + b] = self.sources[i * n + j];
            }
        }
        Ok(out)
    }

    /// Labels shared with `other`, in this matrix's order.
    pub fn common_labels(&self, other: &Dsm) -> Vec<String> {
        self.labels
            .iter()
            .filter(|l| other.labels.contains(l))
            .cloned()
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        let n = self.n();
        for i in 0..n {
            let mut row = vec![self.labels[i].clone()];
            row.extend((0..n).map(|j| self.get(i, j).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Dsm(format!("write failed: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dsm> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("label") {
            return Err(Error::Dsm("DSM CSV must start with a \"label\" column".into()));
        }
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = labels.len();
        let mut d = Dsm::empty(labels);
        let mut rows = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if i >= n {
                return Err(Error::Dsm(format!("more rows than the {n} labels")));
            }
            if rec.get(0) != Some(d.labels[i].as_str()) {
                return Err(Error::Dsm(format!(
                    "row {} is labelled {:?}, expected {:?}",
                    i + 2,
                    rec.get(0).unwrap_or(""),
                    d.labels[i]
                )));
            }
            for j in 0..n {
                let field = rec.get(j + 1).unwrap_or("").trim();
                if field.is_empty() {
                    continue;
                }
                let v: f64 = field.parse().map_err(|_| {
                    Error::Dsm(format!("row {}: bad number {field:?}", i + 2))
                })?;
                d.set_cell(i, j, Some(v), Provenance::Rated);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Dsm(format!("{rows} rows for {n} labels")));
        }
        d.validate()?;
        Ok(d)
    }

    pub fn load_csv(path: &Path) -> Result<Dsm> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Dsm::read_csv(std::io::BufReader::new(file))
    }
}

/// Cohort average with per-cell contributor counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDsm {
    pub dsm: Dsm,
    pub counts: Vec<u32>,
    pub participants: usize,
}

impl GroupDsm {
    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.dsm.n() + j]
    }
}

/// Lower-triangle values and the (row, column) cell each came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Flattened {
    pub values: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

/// Convert ordered similarities to a symmetric DSM.
///
/// Each unordered pair averages whichever orders are present; a single order
/// is marked [`Provenance::Mirrored`]. The diagonal comes from rated identical
/// pairs where available, otherwise 0.
pub fn to_dsm(m: &RatingMatrix) -> Dsm {
    let n = m.n();
    let mut d = Dsm::empty(m.labels.clone());
    for i in 0..n {
        match m.get(i, i) {
            Some(s) => d.set_cell(i, i, Some((100.0 - s) / 100.0), Provenance::Rated),
            None => d.set_cell(i, i, Some(0.0), Provenance::Filled),
        }
        for j in (i + 1)..n {
            match (m.get(i, j), m.get(j, i)) {
                (Some(a), Some(b)) => {
                    d.set_pair(i, j, (100.0 - (a + b) / 2.0) / 100.0, Provenance::Rated)
                }
                (Some(a), None) | (None, Some(a)) => {
                    d.set_pair(i, j, (100.0 - a) / 100.0, Provenance::Mirrored)
                }
                (None, None) => {}
            }
        }
    }
    d
}

/// DSM from single-order (human-format) ratings already rescaled to 0–100.
/// The rated cell keeps [`Provenance::Rated`], its mirror is
/// [`Provenance::Mirrored`], the diagonal is filled with 0.
pub fn mirror_human(m: &RatingMatrix) -> Result<Dsm> {
    let n = m.n();
    let mut d = Dsm::empty(m.labels.clone());
    for i in 0..n {
        d.set_cell(i, i, Some(0.0), Provenance::Filled);
        for j in (i + 1)..n {
            match (m.get(i, j), m.get(j, i)) {
                (Some(_), Some(_)) => {
                    return Err(Error::Dsm(format!(
                        "pair ({}, {}) rated in both orders; not single-order human data",
                        m.labels[i], m.labels[j]
                    )))
                }
                (Some(s), None) => {
                    let v = (100.0 - s) / 100.0;
                    d.set_cell(i, j, Some(v), Provenance::Rated);
                    d.set_cell(j, i, Some(v), Provenance::Mirrored);
                }
                (None, Some(s)) => {
                    let v = (100.0 - s) / 100.0;
                    d.set_cell(j, i, Some(v), Provenance::Rated);
                    d.set_cell(i, j, Some(v), Provenance::Mirrored);
                }
                (None, None) => {}
            }
        }
    }
    Ok(d)
}

/// Cell-wise mean over present values. Summation order is fixed by sorting,
/// so the result does not depend on argument order.
pub fn group_average(dsms: &[Dsm]) -> Result<GroupDsm> {
    let first = dsms
        .first()
        .ok_or_else(|| Error::Dsm("cannot average an empty list of DSMs".into()))?;
    for d in &dsms[1..] {
        if d.labels != first.labels {
            return Err(Error::Dsm("DSMs to average have different labels".into()));
        }
    }
    let n = first.n();
    let mut out = Dsm::empty(first.labels.clone());
    let mut counts = vec![0u32; n * n];
    let mut buf: Vec<f64> = Vec::with_capacity(dsms.len());
    for idx in 0..n * n {
        buf.clear();
        let mut source = None;
        for d in dsms {
            if let Some(v) = d.values[idx] {
                buf.push(v);
                source = source.max(d.sources[idx].map(provenance_rank));
            }
        }
        if buf.is_empty() {
            continue;
        }
        buf.sort_by(f64::total_cmp);
        let mean = buf.iter().sum::<f64>() / buf.len() as f64;
        out.values[idx] = Some(mean);
        out.sources[idx] = source.map(rank_provenance);
        counts[idx] = buf.len() as u32;
    }
    Ok(GroupDsm {
        dsm: out,
        counts,
        participants: dsms.len(),
    })
}

fn provenance_rank(p: Provenance) -> u8 {
    match p {
        Provenance::Filled => 0,
        Provenance::DerivedFromEmbeddings => 1,
        Provenance::Mirrored => 2,
        Provenance::Rated => 3,
    }
}

fn rank_provenance(r: u8) -> Provenance {
    match r {
        0 => Provenance::Filled,
        1 => Provenance::DerivedFromEmbeddings,
        2 => Provenance::Mirrored,
        _ => Provenance::Rated,
    }
}

/// Lower-triangle (i > j) values, optionally restricted by `mask`; absent
/// cells are dropped.
pub fn flatten(d: &Dsm, mask: Option<&PairMask>) -> Flattened {
    let n = d.n();
    let mut out = Flattened::default();
    for i in 1..n {
        for j in 0..i {
            if mask.is_some_and(|m| !m.contains(i, j)) {
                continue;
            }
            if let Some(v) = d.get(i, j) {
                out.values.push(v);
                out.pairs.push((i, j));
            }
        }
    }
    out
}

/// Lower-triangle values of two same-labelled DSMs on their common support.
pub fn paired_vectors(a: &Dsm, b: &Dsm, mask: Option<&PairMask>) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.labels != b.labels {
        return Err(Error::Dsm("paired flattening needs identical labels".into()));
    }
    let n = a.n();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 1..n {
        for j in 0..i {
            if mask.is_some_and(|m| !m.contains(i, j)) {
                continue;
            }
            if let (Some(x), Some(y)) = (a.get(i, j), b.get(i, j)) {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    Ok((xs, ys))
}

/// Replace absent off-diagonal cells with `fill` (0.5 is the image of a
/// rating of 50). Display-only.
pub fn fill_missing(d: &Dsm, fill: f64) -> Result<Dsm> {
    if !(0.0..=1.0).contains(&fill) {
        return Err(Error::Dsm(format!("fill value {fill} outside [0, 1]")));
    }
    let mut out = d.clone();
    let n = d.n();
    for i in 0..n {
        for j in 0..n {
            if i != j && out.get(i, j).is_none() {
                out.set_cell(i, j, Some(fill), Provenance::Filled);
            }
        }
    }
    Ok(out)
}

pub const DEFAULT_FILL: f64 = 0.5;

/// One row of the human ratings CSV (`participant,item_a,item_b,raw_0_50`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanRating {
    pub participant: String,
    pub item_a: String,
    pub item_b: String,
    pub raw_0_50: f64,
}

impl HumanRating {
    /// Slider value rescaled to the 0–100 model scale.
    pub fn rescaled(&self) -> f64 {
        self.raw_0_50 * 2.0
    }
}

pub fn read_human_ratings<R: Read>(input: R) -> Result<Vec<HumanRating>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in r.deserialize::<HumanRating>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Dsm(format!("row {row}: {e}")))?;
        if !(0.0..=50.0).contains(&rec.raw_0_50) {
            bad.push(format!("row {row} ({})", rec.raw_0_50));
        }
        out.push(rec);
    }
    if !bad.is_empty() {
        return Err(Error::Dsm(format!(
            "raw ratings outside [0, 50]: {}",
            bad.join(", ")
        )));
    }
    if out.is_empty() {
        return Err(Error::Dsm("no human ratings".into()));
    }
    Ok(out)
}

/// Per-participant rating matrices over `labels` (or first-appearance order
/// when `labels` is None).
pub fn human_rating_matrices(
    ratings: &[HumanRating],
    labels: Option<&[String]>,
) -> Result<BTreeMap<String, RatingMatrix>> {
    let labels: Vec<String> = match labels {
        Some(l) => l.to_vec(),
        None => {
            let mut seen = Vec::new();
            for r in ratings {
                for item in [&r.item_a, &r.item_b] {
                    if !seen.contains(item) {
                        seen.push(item.clone());
                    }
                }
            }
            seen
        }
    };
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut out: BTreeMap<String, RatingMatrix> = BTreeMap::new();
    for r in ratings {
        let (Some(&i), Some(&j)) = (index.get(r.item_a.as_str()), index.get(r.item_b.as_str())) else {
            return Err(Error::Dsm(format!(
                "participant {}: pair ({}, {}) not in stimulus labels",
                r.participant, r.item_a, r.item_b
            )));
        };
        let m = out
            .entry(r.participant.clone())
            .or_insert_with(|| RatingMatrix::new(labels.clone()));
        if !m.set(i, j, r.rescaled())? {
            log::warn!(
                "participant {}: duplicate rating for ({}, {}), keeping the first",
                r.participant,
                r.item_a,
                r.item_b
            );
        }
    }
    Ok(out)
}
