//! DSMs from precomputed embeddings.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsm::{Dsm, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    labels: Vec<String>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(labels: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != vectors.len() {
            return Err(Error::Embedding(format!(
                "{} labels for {} vectors",
                labels.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut seen = HashSet::new();
        for (label, v) in labels.iter().zip(&vectors) {
            if !seen.insert(label.as_str()) {
                return Err(Error::Embedding(format!("duplicate label {label:?}")));
            }
            if v.len() != dim {
                return Err(Error::Embedding(format!(
                    "{label:?} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Embedding(format!("{label:?} has a non-finite entry")));
            }
        }
        Ok(EmbeddingTable { labels, vectors, dim })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&[f64]> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.vectors[i].as_slice())
    }
}

/// Result of reading a word-vector file for a set of wanted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorLoad {
    pub table: EmbeddingTable,
    /// Wanted labels with no vector (for multi-token labels: some token
    /// missing), in the order asked for.
    pub missing: Vec<String>,
}

fn tokens(label: &str) -> Vec<String> {
    label
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Read a "token v1 v2 ..." text file, keeping only the vectors needed for
/// `wanted`. A label found verbatim is used as is; otherwise its tokens
/// (split on spaces, `_` and `-`) are looked up and averaged. Lookups fall
/// back to lowercase.
pub fn load_word_vectors(path: &Path, wanted: &[String]) -> Result<WordVectorLoad> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut needed: HashSet<String> = HashSet::new();
    for w in wanted {
        needed.insert(w.clone());
        needed.insert(w.to_lowercase());
        for t in tokens(w) {
            needed.insert(t.to_lowercase());
            needed.insert(t);
        }
    }
    let mut found: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Embedding(format!(
                    "{} line {lineno}: {} values, expected {d}",
                    path.display(),
                    values.len()
                )))
            }
            Some(_) => {}
        }
        if values.is_empty() {
            return Err(Error::Embedding(format!("{} line {lineno}: no values", path.display())));
        }
        if !needed.contains(token) || found.contains_key(token) {
            continue;
        }
        let v: Vec<f64> = values
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Embedding(format!("{} line {lineno}: {e}", path.display())))?;
        found.insert(token.to_string(), v);
    }
    let dim = dim.ok_or_else(|| Error::Embedding(format!("{}: empty file", path.display())))?;

    let lookup = |t: &str| found.get(t).or_else(|| found.get(&t.to_lowercase()));
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    let mut missing = Vec::new();
    for w in wanted {
        if let Some(v) = lookup(w) {
            labels.push(w.clone());
            vectors.push(v.clone());
            continue;
        }
        let parts: Option<Vec<&Vec<f64>>> = tokens(w).iter().map(|t| lookup(t)).collect();
        match parts {
            Some(parts) if parts.len() > 1 => {
                let mut mean = vec![0.0; dim];
                for p in &parts {
                    mean.iter_mut().zip(p.iter()).for_each(|(m, x)| *m += x);
                }
                mean.iter_mut().for_each(|m| *m /= parts.len() as f64);
                labels.push(w.clone());
                vectors.push(mean);
            }
            _ => missing.push(w.clone()),
        }
    }
    Ok(WordVectorLoad {
        table: EmbeddingTable::new(labels, vectors)?,
        missing,
    })
}

/// Read a CSV with header `label,d0,d1,...`.
pub fn load_embedding_csv(path: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = r.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Embedding(format!(
            "{}: need a label column and at least one dimension",
            path.display()
        )));
    }
    let dim = header.len() - 1;
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::Embedding(format!(
                "{} row {row}: {} values, expected {dim}",
                path.display(),
                rec.len().saturating_sub(1)
            )));
        }
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Embedding(format!("{} row {row}: {e}", path.display())))?;
        labels.push(rec[0].to_string());
        vectors.push(v);
    }
    if labels.is_empty() {
        return Err(Error::Embedding(format!("{}: no rows", path.display())));
    }
    EmbeddingTable::new(labels, vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineDsm {
    pub dsm: Dsm,
    /// Whether a negative cosine forced the `/2` rescale.
    pub halved: bool,
}

/// `d = 1 − cos(vi, vj)`, divided by 2 when any cosine is negative.
pub fn cosine_dsm(table: &EmbeddingTable, labels: &[String]) -> Result<CosineDsm> {
    let vecs: Vec<&[f64]> = labels
        .iter()
        .map(|l| {
            table
                .get(l)
                .ok_or_else(|| Error::Embedding(format!("no embedding for {l:?}")))
        })
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = vecs
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Embedding(format!("zero vector for {:?}", labels[i])));
    }
    let n = labels.len();
    let mut dense = vec![0.0; n * n];
    let mut negative = false;
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = vecs[i].iter().zip(vecs[j]).map(|(a, b)| a * b).sum();
            let cos = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            negative |= cos < 0.0;
            dense[i * n + j] = 1.0 - cos;
            dense[j * n + i] = 1.0 - cos;
        }
    }
    if negative {
        dense.iter_mut().for_each(|d| *d /= 2.0);
    }
    Ok(CosineDsm {
        dsm: Dsm::from_dense(labels.to_vec(), &dense, Provenance::DerivedFromEmbeddings)?,
        halved: negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::new(
            rows.iter().map(|(l, _)| l.to_string()).collect(),
            rows.iter().map(|(_, v)| v.to_vec()).collect(),
        )
        .unwrap()
    }

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cosine_examples() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[1.0, 1.0]), ("c", &[0.0, 3.0]), ("a2", &[2.0, 0.0])]);
        let c = cosine_dsm(&t, &labels(&["a", "b", "c", "a2"])).unwrap();
        assert!(!c.halved);
        assert!((c.dsm.get(0, 1).unwrap() - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(c.dsm.get(0, 2), Some(1.0));
        assert_eq!(c.dsm.get(0, 3), Some(0.0));
        assert_eq!(c.dsm.provenance(0, 1), Some(Provenance::DerivedFromEmbeddings));

        let t = table(&[("a", &[1.0, 0.0]), ("b", &[-1.0, 0.0]), ("c", &[0.0, 1.0])]);
        let c = cosine_dsm(&t, &labels(&["a", "b", "c"])).unwrap();
        assert!(c.halved);
        assert_eq!(c.dsm.get(0, 1), Some(1.0));
        assert_eq!(c.dsm.get(0, 2), Some(0.5));

        let t = table(&[("a", &[1.0, 0.0]), ("z", &[0.0, 0.0])]);
        let err = cosine_dsm(&t, &labels(&["a", "z"])).unwrap_err().to_string();
        assert!(err.contains("\"z\""), "{err}");
    }

    #[test]
    fn word_vector_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "ice 1 0 0\ncream 0 1 0\nhand 0 0 1\nunused 1 1 1").unwrap();
        drop(f);
        let load = load_word_vectors(&path, &labels(&["Hand", "ice cream", "wheelbarrow"])).unwrap();
        assert_eq!(load.missing, vec!["wheelbarrow".to_string()]);
        assert_eq!(load.table.get("ice cream").unwrap(), &[0.5, 0.5, 0.0]);
        assert_eq!(load.table.get("Hand").unwrap(), &[0.0, 0.0, 1.0]);

        std::fs::write(&path, "a 1 2\nb 1 2 3\n").unwrap();
        let err = load_word_vectors(&path, &labels(&["a"])).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn csv_tables() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "label,d0,d1\ncow,0.1,0.2\ngoat,0.3,0.1\n").unwrap();
        let t = load_embedding_csv(&path).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 2));
        std::fs::write(&path, "").unwrap();
        assert!(load_embedding_csv(&path).is_err());
        std::fs::write(&path, "label,d0\n").unwrap();
        assert!(load_embedding_csv(&path).is_err());
    }
}
