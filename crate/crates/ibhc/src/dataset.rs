//! CSV ingestion and target trees.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ibhc_core::{Tree, TreeBuilder};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::newick::{parse_target_newick, LabelTable, NewickError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column {column}: {value:?} is not a finite number")]
    Cell { row: usize, column: String, value: String },
    #[error("no column {0}")]
    UnknownColumn(String),
    #[error("dataset has {0} rows, need at least 3")]
    TooFewRows(usize),
    #[error("cannot subsample {requested} rows from {available}")]
    Subsample { requested: usize, available: usize },
    #[error("dataset has no label column")]
    NoLabels,
    #[error("labels need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("every class is a singleton, so the target has no triplets")]
    NoTargetTriplets,
    #[error("target leaf {leaf} is not a dataset row (n = {n})")]
    TargetLeaf { leaf: usize, n: usize },
    #[error(transparent)]
    Newick(#[from] NewickError),
}

/// A column chosen by header name or 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        match s.parse() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub label_column: Option<ColumnRef>,
    pub name_column: Option<ColumnRef>,
    /// `None` detects a header: the first record is one when none of its
    /// cells is a number.
    pub has_header: Option<bool>,
    pub subsample: Option<usize>,
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub path: PathBuf,
    pub subsample_seed: Option<u64>,
    /// Data-row positions (0-based) kept from the file.
    pub rows: Vec<usize>,
}

/// Feature matrix (centered) with optional labels and names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec<f64>>,
    pub columns: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub names: Option<Vec<String>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn label_table(&self) -> LabelTable {
        match &self.names {
            Some(n) => LabelTable::from_names(n),
            None => LabelTable::indices(),
        }
    }

    pub fn classes(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| {
            let mut v: Vec<&String> = l.iter().collect();
            v.sort();
            v.dedup();
            v.len()
        })
    }
}

fn find_column(header: &[String], c: &ColumnRef) -> Result<usize, DatasetError> {
    match c {
        ColumnRef::Index(i) if *i < header.len() => Ok(*i),
        ColumnRef::Name(n) => header
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| DatasetError::UnknownColumn(n.clone())),
        _ => Err(DatasetError::UnknownColumn(c.to_string())),
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn load_dataset(path: &Path, opts: &LoadOptions) -> Result<Dataset, DatasetError> {
    let text = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, path, opts)
}

/// [`load_dataset`] on in-memory bytes; `path` is only recorded.
pub fn parse_dataset(bytes: &[u8], path: &Path, opts: &LoadOptions) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut records = Vec::new();
    for r in reader.records() {
        records.push(r?);
    }
    let first: Vec<String> = records.first().map(|r| r.iter().map(str::to_string).collect()).unwrap_or_default();
    let has_header = opts
        .has_header
        .unwrap_or_else(|| !first.is_empty() && first.iter().all(|c| parse_cell(c).is_none()));
    let header: Vec<String> = if has_header {
        first
    } else {
        (0..first.len()).map(|i| i.to_string()).collect()
    };
    let data = if has_header { &records[1..] } else { &records[..] };
    let label_col = opts.label_column.as_ref().map(|c| find_column(&header, c)).transpose()?;
    let name_col = opts.name_column.as_ref().map(|c| find_column(&header, c)).transpose()?;
    let features: Vec<usize> = (0..header.len()).filter(|&i| Some(i) != label_col && Some(i) != name_col).collect();

    let mut keep: Vec<usize> = (0..data.len()).collect();
    if let Some(n) = opts.subsample {
        if n > data.len() {
            return Err(DatasetError::Subsample {
                requested: n,
                available: data.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.subsample_seed);
        keep = index::sample(&mut rng, data.len(), n).into_vec();
        keep.sort_unstable();
    }
    if keep.len() < 3 {
        return Err(DatasetError::TooFewRows(keep.len()));
    }

    let mut rows = Vec::with_capacity(keep.len());
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for &k in &keep {
        let rec = &data[k];
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        let mut row = Vec::with_capacity(features.len());
        for &f in &features {
            let cell = rec.get(f).unwrap_or("");
            row.push(parse_cell(cell).ok_or_else(|| DatasetError::Cell {
                row: line,
                column: header[f].clone(),
                value: cell.to_string(),
            })?);
        }
        rows.push(row);
        if let Some(c) = label_col {
            labels.push(rec.get(c).unwrap_or("").to_string());
        }
        if let Some(c) = name_col {
            names.push(rec.get(c).unwrap_or("").to_string());
        }
    }
    center(&mut rows);
    Ok(Dataset {
        rows,
        columns: features.iter().map(|&f| header[f].clone()).collect(),
        labels: label_col.map(|_| labels),
        names: name_col.map(|_| names),
        provenance: Provenance {
            path: path.to_path_buf(),
            subsample_seed: opts.subsample.map(|_| opts.subsample_seed),
            rows: keep,
        },
    })
}

/// Subtracts column means.
pub fn center(rows: &mut [Vec<f64>]) {
    let Some(d) = rows.first().map(Vec::len) else { return };
    let n = rows.len() as f64;
    for k in 0..d {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        for r in rows.iter_mut() {
            r[k] -= mean;
        }
    }
}

/// The K-way classification tree: a root with one child per class (in
/// order of first appearance), each an unresolved cluster of its rows.
pub fn target_from_labels(data: &Dataset) -> Result<Tree, DatasetError> {
    let labels = data.labels.as_ref().ok_or(DatasetError::NoLabels)?;
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        members
            .entry(l.as_str())
            .or_insert_with(|| {
                order.push(l.as_str());
                Vec::new()
            })
            .push(i);
    }
    if order.len() < 2 {
        return Err(DatasetError::TooFewClasses(order.len()));
    }
    if order.len() == labels.len() {
        return Err(DatasetError::NoTargetTriplets);
    }
    let mut b = TreeBuilder::new();
    let kids: Vec<_> = order
        .iter()
        .map(|l| {
            let leaves: Vec<_> = members[l].iter().map(|&i| b.leaf(i)).collect();
            if leaves.len() == 1 {
                leaves[0]
            } else {
                b.internal(leaves, None)
            }
        })
        .collect();
    let root = b.internal(kids, None);
    Ok(b.finish(root).expect("labels give a well-formed tree"))
}

/// Reads a (possibly non-binary) target whose leaves are dataset rows,
/// named through the dataset's name column when it has one.
pub fn target_from_newick(path: &Path, data: &Dataset) -> Result<Tree, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let t = parse_target_newick(text.trim(), &data.label_table())?;
    if let Some(leaf) = t.leaves().find(|&l| l >= data.n()) {
        return Err(DatasetError::TargetLeaf { leaf, n: data.n() });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ibhc_core::triplet::extract_triplets;

    fn parse(text: &str, opts: &LoadOptions) -> Result<Dataset, DatasetError> {
        parse_dataset(text.as_bytes(), Path::new("mem.csv"), opts)
    }

    fn with_labels(col: &str) -> LoadOptions {
        LoadOptions {
            label_column: Some(col.into()),
            ..Default::default()
        }
    }

    #[test]
    fn header_labels_and_centering() {
        let d = parse("x,y,kind\n1,10,a\n2,20,b\n3,30,a\n", &with_labels("kind")).unwrap();
        assert_eq!(d.columns, vec!["x", "y"]);
        assert_eq!(d.rows, vec![vec![-1.0, -10.0], vec![0.0, 0.0], vec![1.0, 10.0]]);
        assert_eq!(d.labels.as_deref().unwrap(), ["a", "b", "a"]);
        assert_eq!(d.classes(), 2);
    }

    #[test]
    fn headerless_with_label_by_index() {
        let d = parse("1,2,a\n3,4,b\n5,6,c\n", &with_labels("2")).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn bad_cells_name_row_and_column() {
        let e = parse("x,y\n1,2\n3,NaN\n5,6\n", &LoadOptions::default()).unwrap_err();
        let msg = e.to_string();
        assert!(matches!(&e, DatasetError::Cell { row: 3, column, .. } if column == "y"), "{msg}");
        assert!(msg.contains("row 3") && msg.contains("column y") && msg.contains("NaN"), "{msg}");
        let e = parse("x,y\n1,2\n3,abc\n5,6\n", &LoadOptions::default()).unwrap_err();
        assert!(matches!(e, DatasetError::Cell { row: 3, .. }));
        assert!(matches!(parse("x,y\n1,2\n3\n", &LoadOptions::default()), Err(DatasetError::Csv(_))));
        assert!(matches!(parse("x\n1\n2\n", &LoadOptions::default()), Err(DatasetError::TooFewRows(2))));
        assert!(matches!(parse("x\n1\n2\n3\n", &with_labels("kind")), Err(DatasetError::UnknownColumn(_))));
    }

    #[test]
    fn subsample_is_deterministic() {
        let text: String = std::iter::once("v\n".to_string()).chain((0..400).map(|i| format!("{i}\n"))).collect();
        let opts = LoadOptions {
            subsample: Some(150),
            subsample_seed: 9,
            ..Default::default()
        };
        let a = parse(&text, &opts).unwrap();
        let b = parse(&text, &opts).unwrap();
        assert_eq!(a.n(), 150);
        assert_eq!(a, b);
        assert!(a.provenance.rows.windows(2).all(|w| w[0] < w[1]));
        let c = parse(&text, &LoadOptions { subsample_seed: 10, ..opts }).unwrap();
        assert_ne!(a.provenance.rows, c.provenance.rows);
    }

    #[test]
    fn label_target_triplet_count() {
        let text: String = std::iter::once("v,k\n".to_string())
            .chain((0..150).map(|i| format!("{i},{}\n", i / 50)))
            .collect();
        let d = parse(&text, &with_labels("k")).unwrap();
        let t = target_from_labels(&d).unwrap();
        assert_eq!(t.children(t.root()).len(), 3);
        // 3 * C(50,2) * 100
        assert_eq!(extract_triplets(&t).len(), 3 * 50 * 49 / 2 * 100);
    }

    #[test]
    fn label_target_degenerate_cases() {
        let d = parse("v,k\n1,a\n2,b\n3,c\n", &with_labels("k")).unwrap();
        assert!(matches!(target_from_labels(&d), Err(DatasetError::NoTargetTriplets)));
        let d = parse("v,k\n1,a\n2,a\n3,a\n", &with_labels("k")).unwrap();
        assert!(matches!(target_from_labels(&d), Err(DatasetError::TooFewClasses(1))));
        let d = parse("v,k\n1,a\n2,b\n3,a\n", &with_labels("k")).unwrap();
        let t = target_from_labels(&d).unwrap();
        assert_eq!(t.canonical(), "((0,2),1)");
    }
}
