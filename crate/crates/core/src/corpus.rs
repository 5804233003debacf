//! Stimulus sets: loading, validation, pair enumeration and category masks.
//!
//! A [`StimulusSet`] fixes the canonical row/column order of every matrix
//! built from it. Pairs are always enumerated row-major over that order;
//! per-participant shuffling happens later, in [`crate::cohort`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUILTIN_TABLE: &str = include_str!("../data/stimuli.tsv");

/// Object category of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Human,
    Animal,
    NaturalObject,
    ManmadeObject,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Human => "Human",
            Category::Animal => "Animal",
            Category::NaturalObject => "NaturalObject",
            Category::ManmadeObject => "ManmadeObject",
        };
        f.write_str(s)
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CategoryMap::default()
            .lookup(s)
            .ok_or_else(|| Error::Corpus(format!("unknown category {s:?}")))
    }
}

/// Mapping from the class strings found in stimulus tables to [`Category`].
///
/// Keys are matched case-insensitively after trimming.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryMap {
    entries: BTreeMap<String, Category>,
}

impl Default for CategoryMap {
    fn default() -> Self {
        let pairs = [
            ("Human", Category::Human),
            ("Animal", Category::Animal),
            ("Neutral Objects", Category::NaturalObject),
            ("Natural Objects", Category::NaturalObject),
            ("Natural", Category::NaturalObject),
            ("NaturalObject", Category::NaturalObject),
            ("Manmade Objects", Category::ManmadeObject),
            ("Man-Made Objects", Category::ManmadeObject),
            ("Man-Made", Category::ManmadeObject),
            ("ManmadeObject", Category::ManmadeObject),
        ];
        let mut map = CategoryMap {
            entries: BTreeMap::new(),
        };
        for (k, v) in pairs {
            map.insert(k, v);
        }
        map
    }
}

impl CategoryMap {
    pub fn empty() -> Self {
        CategoryMap {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, class: &str, category: Category) {
        self.entries.insert(class.trim().to_lowercase(), category);
    }

    pub fn lookup(&self, class: &str) -> Option<Category> {
        self.entries.get(&class.trim().to_lowercase()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: String,
    pub label: String,
    pub category: Category,
    /// Dataset name (table column) to image path.
    #[serde(default)]
    pub image_refs: BTreeMap<String, PathBuf>,
}

impl Stimulus {
    pub fn new(id: impl Into<String>, category: Category) -> Self {
        let id = id.into();
        Stimulus {
            label: id.clone(),
            id,
            category,
            image_refs: BTreeMap::new(),
        }
    }

    pub fn image(&self, dataset: &str) -> Option<&Path> {
        self.image_refs.get(dataset).map(PathBuf::as_path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusSet {
    pub name: String,
    /// Image column names in table order; kept so a set serializes back to
    /// the same columns.
    pub image_datasets: Vec<String>,
    items: Vec<Stimulus>,
}

/// How to enumerate item pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Every ordered pair including identical pairs: n².
    OrderedWithDiagonal,
    /// Unordered distinct pairs with i < j: n(n-1)/2.
    UnorderedNoDiagonal,
}

/// Boolean selection over the unordered off-diagonal pairs of an n-item set,
/// aligned with [`unordered_pairs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMask {
    pub name: String,
    pub n_items: usize,
    keep: Vec<bool>,
}

impl PairMask {
    pub fn new(name: impl Into<String>, n_items: usize, keep: Vec<bool>) -> Result<Self> {
        let expected = n_items * n_items.saturating_sub(1) / 2;
        if keep.len() != expected {
            return Err(Error::Corpus(format!(
                "mask length {} does not match {expected} pairs for {n_items} items",
                keep.len()
            )));
        }
        Ok(PairMask {
            name: name.into(),
            n_items,
            keep,
        })
    }

    pub fn all(name: impl Into<String>, n_items: usize) -> Self {
        PairMask {
            name: name.into(),
            n_items,
            keep: vec![true; n_items * n_items.saturating_sub(1) / 2],
        }
    }

    /// Whether the unordered pair {i, j} is selected. Diagonal pairs never are.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.keep[unordered_index(self.n_items, a, b)]
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }
}

/// Position of the unordered pair (a, b), a < b, in row-major i<j order.
pub fn unordered_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < n);
    // rows 0..a contribute (n-1) + (n-2) + ... + (n-a)
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

/// Row-major unordered pairs (i, j) with i < j.
pub fn unordered_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push((i, j));
        }
    }
    out
}

pub fn pair_count(n: usize, mode: PairMode) -> usize {
    match mode {
        PairMode::OrderedWithDiagonal => n * n,
        PairMode::UnorderedNoDiagonal => n * n.saturating_sub(1) / 2,
    }
}

impl StimulusSet {
    pub fn new(name: impl Into<String>, items: Vec<Stimulus>) -> Result<Self> {
        let mut seen = HashSet::new();
        for item in &items {
            if item.label.trim().is_empty() {
                return Err(Error::Corpus(format!("stimulus {:?} has an empty label", item.id)));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate stimulus id {:?}", item.id)));
            }
        }
        let mut image_datasets: Vec<String> = Vec::new();
        for item in &items {
            for k in item.image_refs.keys() {
                if !image_datasets.contains(k) {
                    image_datasets.push(k.clone());
                }
            }
        }
        Ok(StimulusSet {
            name: name.into(),
            image_datasets,
            items,
        })
    }

    /// The 67-item word/image roster shipped with the crate.
    pub fn builtin() -> Self {
        parse_table("builtin", BUILTIN_TABLE, &CategoryMap::default())
            .expect("builtin stimulus table is valid")
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Stimulus] {
        &self.items
    }

    pub fn get(&self, index: usize) -> Option<&Stimulus> {
        self.items.get(index)
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|s| s.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|s| s.id == id)
    }

    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Items that have an image in `dataset`, in set order.
    pub fn with_images(&self, dataset: &str) -> Result<StimulusSet> {
        let items: Vec<Stimulus> = self
            .items
            .iter()
            .filter(|s| s.image_refs.contains_key(dataset))
            .cloned()
            .collect();
        if items.is_empty() {
            return Err(Error::Corpus(format!("no stimuli have a {dataset:?} image")));
        }
        let mut set = StimulusSet::new(format!("{}[{dataset}]", self.name), items)?;
        set.image_datasets = self.image_datasets.clone();
        Ok(set)
    }

    /// Serialize as a tab-separated table that [`load_stimulus_set`] reads back.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "object\tclass")?;
        for d in &self.image_datasets {
            write!(out, "\t{d}")?;
        }
        writeln!(out)?;
        for s in &self.items {
            write!(out, "{}\t{}", s.id, s.category)?;
            for d in &self.image_datasets {
                match s.image_refs.get(d) {
                    Some(p) => write!(out, "\t{}", p.display())?,
                    None => write!(out, "\t-")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Load a stimulus table. When `image_root` is given every image reference
/// must resolve to an existing file below it.
pub fn load_stimulus_set(path: &Path, image_root: Option<&Path>) -> Result<StimulusSet> {
    load_stimulus_set_with(path, image_root, &CategoryMap::default())
}

pub fn load_stimulus_set_with(
    path: &Path,
    image_root: Option<&Path>,
    categories: &CategoryMap,
) -> Result<StimulusSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stimuli".to_string());
    let set = parse_table(&name, &text, categories)?;
    if let Some(root) = image_root {
        check_images(&set, root)?;
    }
    Ok(set)
}

/// Parse the tab-separated stimulus table format.
pub fn parse_table(name: &str, text: &str, categories: &CategoryMap) -> Result<StimulusSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(Error::Corpus("no stimuli".into()));
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    if columns.len() < 2
        || !columns[0].eq_ignore_ascii_case("object")
        || !columns[1].eq_ignore_ascii_case("class")
    {
        return Err(Error::Corpus(format!(
            "header must start with object<TAB>class, got {header:?}"
        )));
    }
    let datasets: Vec<String> = columns[2..].iter().map(|s| s.to_string()).collect();

    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines {
        let row = lineno + 1;
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::Corpus(format!(
                "row {row}: expected {} columns, found {}",
                columns.len(),
                fields.len()
            )));
        }
        let object = fields[0];
        if object.is_empty() {
            return Err(Error::Corpus(format!("row {row}: empty object label")));
        }
        if !seen.insert(object.to_string()) {
            return Err(Error::Corpus(format!("row {row}: duplicate object {object:?}")));
        }
        let category = categories.lookup(fields[1]).ok_or_else(|| {
            Error::Corpus(format!("row {row}: unknown category {:?}", fields[1]))
        })?;
        let mut stim = Stimulus::new(object, category);
        for (d, value) in datasets.iter().zip(&fields[2..]) {
            if !value.is_empty() && *value != "-" {
                stim.image_refs.insert(d.clone(), PathBuf::from(value));
            }
        }
        items.push(stim);
    }
    if items.is_empty() {
        return Err(Error::Corpus("no stimuli".into()));
    }
    let mut set = StimulusSet::new(name, items)?;
    set.image_datasets = datasets;
    Ok(set)
}

fn check_images(set: &StimulusSet, root: &Path) -> Result<()> {
    let missing: Vec<String> = set
        .items
        .iter()
        .flat_map(|s| s.image_refs.values())
        .map(|p| root.join(p))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Corpus(format!(
            "{} missing image file(s): {}",
            missing.len(),
            missing.join(", ")
        )))
    }
}

/// Index pairs over the set in canonical row-major order.
pub fn enumerate_pairs(set: &StimulusSet, mode: PairMode) -> Vec<(usize, usize)> {
    let n = set.len();
    match mode {
        PairMode::OrderedWithDiagonal => (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect(),
        PairMode::UnorderedNoDiagonal => unordered_pairs(n),
    }
}

/// Items of `a` whose ids also occur in `b`, in `a`'s order.
pub fn intersect_sets(a: &StimulusSet, b: &StimulusSet) -> Result<StimulusSet> {
    let ids: HashSet<&str> = b.items.iter().map(|s| s.id.as_str()).collect();
    let items: Vec<Stimulus> = a
        .items
        .iter()
        .filter(|s| ids.contains(s.id.as_str()))
        .cloned()
        .collect();
    if items.is_empty() {
        return Err(Error::Corpus(format!(
            "sets {:?} and {:?} have no stimuli in common",
            a.name, b.name
        )));
    }
    let mut set = StimulusSet::new(format!("{}&{}", a.name, b.name), items)?;
    set.image_datasets = a.image_datasets.clone();
    Ok(set)
}

/// Within-category and between-category masks over the unordered pairs.
pub fn category_masks(set: &StimulusSet) -> (PairMask, PairMask) {
    let n = set.len();
    let within: Vec<bool> = unordered_pairs(n)
        .into_iter()
        .map(|(i, j)| set.items[i].category == set.items[j].category)
        .collect();
    let between = within.iter().map(|w| !w).collect();
    (
        PairMask {
            name: "within".into(),
            n_items: n,
            keep: within,
        },
        PairMask {
            name: "between".into(),
            n_items: n,
            keep: between,
        },
    )
}

/// Category masks for an arbitrary label order, looking categories up in `set`.
/// Labels not present in the set are never selected.
pub fn category_masks_for(labels: &[String], set: &StimulusSet) -> (PairMask, PairMask) {
    let lookup: HashMap<&str, Category> =
        set.items.iter().map(|s| (s.id.as_str(), s.category)).collect();
    let cats: Vec<Option<Category>> = labels.iter().map(|l| lookup.get(l.as_str()).copied()).collect();
    let n = labels.len();
    let mut within = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut between = Vec::with_capacity(within.capacity());
    for (i, j) in unordered_pairs(n) {
        match (cats[i], cats[j]) {
            (Some(a), Some(b)) => {
                within.push(a == b);
                between.push(a != b);
            }
            _ => {
                within.push(false);
                between.push(false);
            }
        }
    }
    (
        PairMask {
            name: "within".into(),
            n_items: n,
            keep: within,
        },
        PairMask {
            name: "between".into(),
            n_items: n,
            keep: between,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> StimulusSet {
        StimulusSet::new(
            "toy",
            vec![
                Stimulus::new("a", Category::Animal),
                Stimulus::new("b", Category::Animal),
                Stimulus::new("c", Category::Human),
                Stimulus::new("d", Category::Human),
            ],
        )
        .unwrap()
    }

    #[test]
    fn builtin_roster() {
        let set = StimulusSet::builtin();
        assert_eq!(set.len(), 67);
        assert_eq!(enumerate_pairs(&set, PairMode::OrderedWithDiagonal).len(), 4489);
        assert_eq!(enumerate_pairs(&set, PairMode::UnorderedNoDiagonal).len(), 2211);
        let things = set.with_images("things_image").unwrap();
        assert_eq!(things.len(), 55);
        assert_eq!(enumerate_pairs(&things, PairMode::OrderedWithDiagonal).len(), 3025);
        assert_eq!(intersect_sets(&set, &things).unwrap().len(), 55);
        let hand = &set.items()[0];
        assert_eq!(hand.id, "hand");
        assert_eq!(hand.image("carlson_image"), Some(Path::new("stimulus1.png")));
        assert_eq!(hand.image("things_image"), Some(Path::new("hand_10s.jpg")));
    }

    #[test]
    fn first_table_row_has_two_images() {
        let set = parse_table(
            "t",
            "object\tclass\tcarlson_image\tthings_image\nhand\tHuman\tstimulus1.png\thand_10s.jpg\n",
            &CategoryMap::default(),
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.items()[0].image_refs.len(), 2);
    }

    #[test]
    fn empty_and_bad_tables() {
        let cats = CategoryMap::default();
        let err = parse_table("t", "", &cats).unwrap_err().to_string();
        assert!(err.contains("no stimuli"), "{err}");
        let err = parse_table("t", "object\tclass\n", &cats).unwrap_err().to_string();
        assert!(err.contains("no stimuli"), "{err}");
        let err = parse_table("t", "object\tclass\ncow\tAnimal\ncow\tAnimal\n", &cats)
            .unwrap_err()
            .to_string();
        assert!(err.contains("duplicate"), "{err}");
        let err = parse_table("t", "object\tclass\ncow\tAnimal\nrock\tMineral\n", &cats)
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 3") && err.contains("Mineral"), "{err}");
    }

    #[test]
    fn missing_images_are_all_listed() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("s.tsv");
        std::fs::write(
            &table,
            "object\tclass\timg\ncow\tAnimal\tcow.png\ngoat\tAnimal\tgoat.png\nlake\tNatural\t-\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("goat.png"), b"x").unwrap();
        assert!(load_stimulus_set(&table, None).is_ok());
        let err = load_stimulus_set(&table, Some(dir.path())).unwrap_err().to_string();
        assert!(err.contains("cow.png") && !err.contains("goat.png"), "{err}");
        std::fs::write(dir.path().join("cow.png"), b"x").unwrap();
        assert!(load_stimulus_set(&table, Some(dir.path())).is_ok());
    }

    #[test]
    fn intersection() {
        let set = toy();
        assert_eq!(intersect_sets(&set, &set).unwrap(), {
            let mut s = set.clone();
            s.name = "toy&toy".into();
            s
        });
        let other = StimulusSet::new("o", vec![Stimulus::new("z", Category::Animal)]).unwrap();
        assert!(intersect_sets(&set, &other).is_err());
    }

    #[test]
    fn toy_category_masks() {
        // pairs: ab(w) ac bd ad bc cd(w)
        let (within, between) = category_masks(&toy());
        assert_eq!(within.count(), 2);
        assert_eq!(between.count(), 4);
        assert!(within.contains(0, 1) && within.contains(3, 2));
        assert!(!within.contains(1, 1));

        let same = StimulusSet::new(
            "s",
            vec![
                Stimulus::new("a", Category::Animal),
                Stimulus::new("b", Category::Animal),
                Stimulus::new("c", Category::Animal),
            ],
        )
        .unwrap();
        let (w, b) = category_masks(&same);
        assert_eq!((w.count(), b.count()), (3, 0));
    }

    #[test]
    fn builtin_masks_partition() {
        let (w, b) = category_masks(&StimulusSet::builtin());
        assert_eq!(w.count() + b.count(), 2211);
        assert!(w.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x != y));
    }

    #[test]
    fn unordered_index_matches_enumeration() {
        for n in 2..9 {
            for (k, (i, j)) in unordered_pairs(n).into_iter().enumerate() {
                assert_eq!(unordered_index(n, i, j), k);
            }
        }
    }

    #[test]
    fn tsv_round_trip() {
        let set = StimulusSet::builtin();
        let mut buf = Vec::new();
        set.write_tsv(&mut buf).unwrap();
        let back = parse_table("builtin", std::str::from_utf8(&buf).unwrap(), &CategoryMap::default())
            .unwrap();
        assert_eq!(back, set);
    }
}
