//! Citation-network ingestion: content and cites files, positive-class
//! binarization and PU splits.

mod split;
pub mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{Adjacency, BuildReport, GraphError};
use crate::tensor::Tensor;

pub use split::{load_split, make_pu_split, save_split, split_labels, PuSplit, SPLIT_VERSION};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate node id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("positive class {requested:?} not found; available classes: {}", available.join(", "))]
    UnknownClass {
        requested: String,
        available: Vec<String>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("split file: {0}")]
    Split(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parsed content file. `labels` holds the raw label string of every node.
#[derive(Clone, Debug)]
pub struct Content {
    pub node_ids: Vec<String>,
    pub features: Tensor,
    pub labels: Vec<String>,
}

/// Parses `<id> <f_1> … <f_m> <label>` lines. Blank lines are skipped.
pub fn parse_content(text: &str, path: &Path) -> Result<Content> {
    let mut node_ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    let mut seen = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let parse_err = |message: String| DataError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        if tokens.len() < 3 {
            return Err(parse_err(format!(
                "expected id, features and label, found {} fields",
                tokens.len()
            )));
        }
        let m = tokens.len() - 2;
        match width {
            None => width = Some(m),
            Some(w) if w != m => {
                return Err(parse_err(format!("expected {w} features, found {m}")));
            }
            _ => {}
        }
        for tok in &tokens[1..=m] {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(format!("bad feature value {tok:?}")))?;
            data.push(v);
        }
        let id = tokens[0].to_string();
        if seen.insert(id.clone(), lineno).is_some() {
            return Err(DataError::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id,
            });
        }
        node_ids.push(id);
        labels.push(tokens[m + 1].to_string());
    }
    let m = width.ok_or_else(|| DataError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "no nodes".into(),
    })?;
    let features = Tensor::new(node_ids.len(), m, data).expect("row width checked per line");
    Ok(Content {
        node_ids,
        features,
        labels,
    })
}

pub fn load_content(path: &Path) -> Result<Content> {
    parse_content(&read(path)?, path)
}

/// Edges among known nodes plus bookkeeping about the raw file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cites {
    pub edges: Vec<(usize, usize)>,
    /// Non-blank lines in the file.
    pub lines: usize,
    /// Lines naming an id absent from the content file.
    pub unknown: usize,
}

pub fn parse_cites(text: &str, path: &Path, node_ids: &[String]) -> Result<Cites> {
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut out = Cites::default();
    for (lineno, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 2 {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected two node ids, found {} fields", tokens.len()),
            });
        }
        out.lines += 1;
        match (index.get(tokens[0]), index.get(tokens[1])) {
            (Some(&a), Some(&b)) => out.edges.push((a, b)),
            _ => out.unknown += 1,
        }
    }
    Ok(out)
}

pub fn load_cites(path: &Path, node_ids: &[String]) -> Result<Cites> {
    parse_cites(&read(path)?, path, node_ids)
}

/// Sorted distinct label strings and each node's index into them.
pub fn class_index(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let classes: Vec<String> = labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ids = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label collected above"))
        .collect();
    (classes, ids)
}

/// Resolves a positive class given by name, or by index into `classes` when
/// no class has that name.
pub fn resolve_class(classes: &[String], positive_class: &str) -> Result<usize> {
    if let Some(i) = classes.iter().position(|c| c == positive_class) {
        return Ok(i);
    }
    match positive_class.parse::<usize>() {
        Ok(i) if i < classes.len() => Ok(i),
        _ => Err(DataError::UnknownClass {
            requested: positive_class.to_string(),
            available: classes.to_vec(),
        }),
    }
}

/// `1` where the raw class id equals `positive`, `0` elsewhere.
pub fn binarize(raw_labels: &[usize], positive: usize) -> Result<Vec<u8>> {
    if !raw_labels.contains(&positive) {
        let available: Vec<String> = raw_labels
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|c| c.to_string())
            .collect();
        return Err(DataError::UnknownClass {
            requested: positive.to_string(),
            available,
        });
    }
    Ok(raw_labels.iter().map(|&c| u8::from(c == positive)).collect())
}

/// Default positive class per known dataset, by class name or index.
pub fn default_positive_class(dataset: &str) -> Option<&'static str> {
    match dataset.to_ascii_lowercase().as_str() {
        "cora" => Some("Neural_Networks"),
        "citeseer" => Some("IR"),
        "dblp" => Some("1"),
        _ => None,
    }
}

/// Locations of a dataset's content and cites files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetFiles {
    pub content: PathBuf,
    pub cites: PathBuf,
}

impl DatasetFiles {
    /// Looks for `<dir>/<name>/<name>.{content,cites}`, then
    /// `<dir>/<name>.{content,cites}`.
    pub fn locate(dir: &Path, name: &str) -> Result<Self> {
        let candidates = [dir.join(name), dir.to_path_buf()];
        for base in &candidates {
            let files = DatasetFiles {
                content: base.join(format!("{name}.content")),
                cites: base.join(format!("{name}.cites")),
            };
            if files.content.is_file() && files.cites.is_file() {
                return Ok(files);
            }
        }
        Err(DataError::Config(format!(
            "dataset {name:?} not found: expected {name}.content and {name}.cites in {} or {}",
            candidates[0].display(),
            candidates[1].display()
        )))
    }
}

/// Table-style summary of a loaded dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub nodes: usize,
    /// Citation lines in the file, before filtering, symmetrization and merging.
    pub edges: usize,
    pub classes: usize,
    pub features: usize,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} nodes, {} edges, {} classes, {} features",
            self.nodes, self.edges, self.classes, self.features
        )
    }
}

#[derive(Clone, Debug)]
pub struct GraphDataset {
    pub name: String,
    pub node_ids: Vec<String>,
    pub features: Arc<Tensor>,
    pub adjacency: Adjacency,
    pub classes: Vec<String>,
    pub raw_labels: Vec<usize>,
    pub positive_class: String,
    pub binary_labels: Vec<u8>,
    pub cites: Cites,
    pub build_report: BuildReport,
    pub row_normalized: bool,
    /// SHA-256 over the content and cites files.
    pub fingerprint: String,
}

impl GraphDataset {
    /// Assembles a dataset from parsed parts. `positive_class` is a class
    /// name or an index into the sorted class names.
    pub fn from_parts(
        name: &str,
        content: Content,
        cites: Cites,
        positive_class: &str,
        row_normalize: bool,
        fingerprint: String,
    ) -> Result<Self> {
        let (classes, raw_labels) = class_index(&content.labels);
        let positive = resolve_class(&classes, positive_class)?;
        let binary_labels = binarize(&raw_labels, positive)?;
        let n = content.node_ids.len();
        let (adjacency, build_report) = Adjacency::build(&cites.edges, n)?;
        let mut features = content.features;
        if row_normalize {
            row_normalize_in_place(&mut features);
        }
        Ok(GraphDataset {
            name: name.to_string(),
            node_ids: content.node_ids,
            features: Arc::new(features),
            adjacency,
            positive_class: classes[positive].clone(),
            classes,
            raw_labels,
            binary_labels,
            cites,
            build_report,
            row_normalized: row_normalize,
            fingerprint,
        })
    }

    pub fn load(
        name: &str,
        files: &DatasetFiles,
        positive_class: &str,
        row_normalize: bool,
    ) -> Result<Self> {
        let content_text = read(&files.content)?;
        let cites_text = read(&files.cites)?;
        let mut hasher = Sha256::new();
        hasher.update(content_text.as_bytes());
        hasher.update([0u8]);
        hasher.update(cites_text.as_bytes());
        let fingerprint = hex::encode(hasher.finalize());
        let content = parse_content(&content_text, &files.content)?;
        let cites = parse_cites(&cites_text, &files.cites, &content.node_ids)?;
        if cites.unknown > 0 {
            log::warn!(
                "{}: skipped {} citation lines naming unknown nodes",
                files.cites.display(),
                cites.unknown
            );
        }
        Self::from_parts(name, content, cites, positive_class, row_normalize, fingerprint)
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_positives(&self) -> usize {
        self.binary_labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            nodes: self.n(),
            edges: self.cites.lines,
            classes: self.classes.len(),
            features: self.num_features(),
        }
    }
}

/// Scales every row to sum to 1; all-zero rows are left alone.
pub fn row_normalize_in_place(t: &mut Tensor) {
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let s: f64 = row.iter().sum();
        if s != 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("toy")
    }

    #[test]
    fn content_toy() {
        let c = parse_content("a 1 0 0 x\nb 0 1 0.5 y\n", p()).unwrap();
        assert_eq!(c.features.shape(), (2, 3));
        assert_eq!(c.features.row(1), &[0.0, 1.0, 0.5]);
        assert_eq!(c.node_ids, ["a", "b"]);
        assert_eq!(c.labels, ["x", "y"]);
    }

    #[test]
    fn content_errors_carry_line_numbers() {
        let err = parse_content("a 1 0 x\nb 1 y\n", p()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
        let err = parse_content("a 1 0 x\n\na 0 1 y\n", p()).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId { line: 3, .. }), "{err}");
        assert!(parse_content("a 1 q x\n", p()).is_err());
        assert!(parse_content("", p()).is_err());
    }

    #[test]
    fn cites_toy_and_unknown() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let c = parse_cites("a b\n", p(), &ids).unwrap();
        assert_eq!(c.edges, [(0, 1)]);
        let c = parse_cites("a b\nb zz\n\n", p(), &ids).unwrap();
        assert_eq!((c.edges.len(), c.lines, c.unknown), (1, 2, 1));
        assert!(parse_cites("a b c\n", p(), &ids).is_err());
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[3, 1, 3], 3).unwrap(), [1, 0, 1]);
        match binarize(&[3, 1, 3], 2).unwrap_err() {
            DataError::UnknownClass { available, .. } => assert_eq!(available, ["1", "3"]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn class_resolution_by_name_or_index() {
        let labels: Vec<String> = ["b", "a", "c", "a"].iter().map(|s| s.to_string()).collect();
        let (classes, ids) = class_index(&labels);
        assert_eq!(classes, ["a", "b", "c"]);
        assert_eq!(ids, [1, 0, 2, 0]);
        assert_eq!(resolve_class(&classes, "c").unwrap(), 2);
        assert_eq!(resolve_class(&classes, "1").unwrap(), 1);
        let err = resolve_class(&classes, "7").unwrap_err().to_string();
        assert!(err.contains("a, b, c"), "{err}");
    }

    #[test]
    fn dataset_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("toy");
        fs::create_dir(&sub).unwrap();
        fs::write(sub.join("toy.content"), "n1 1 1 A\nn2 0 2 B\nn3 0 0 A\n").unwrap();
        fs::write(sub.join("toy.cites"), "n1 n2\nn2 n1\nn3 n3\nn3 ghost\n").unwrap();
        let files = DatasetFiles::locate(dir.path(), "toy").unwrap();
        let ds = GraphDataset::load("toy", &files, "A", true).unwrap();
        assert_eq!(ds.stats().to_string(), "3 nodes, 4 edges, 2 classes, 2 features");
        assert_eq!(ds.binary_labels, [1, 0, 1]);
        assert_eq!(ds.adjacency.num_edges(), 1);
        assert_eq!(ds.cites.unknown, 1);
        assert_eq!(ds.features.row(0), &[0.5, 0.5]);
        assert_eq!(ds.features.row(2), &[0.0, 0.0]);
        assert_eq!(ds.fingerprint.len(), 64);
        assert!(DatasetFiles::locate(dir.path(), "missing").is_err());
    }
}
