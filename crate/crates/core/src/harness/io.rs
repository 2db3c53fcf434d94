//! On-disk dataset container.
//!
//! A dataset is a directory holding four files:
//!
//! * `edges.txt`: one undirected edge per line as two 0-based node ids
//!   separated by whitespace or a comma. `#` starts a comment; blank lines
//!   are ignored. Duplicates and both arc directions are accepted.
//! * `features.csv`: one comma-separated row of numbers per node, no header.
//! * `labels.csv`: one non-negative integer class per line, no header. The
//!   number of lines defines the node count.
//! * `meta.json` (optional on load): [`DatasetMeta`]. When present, its
//!   `num_classes` is used instead of inferring `max label + 1`.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::csbm::{measured_edge_homophily, CsbmParams};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, LabelVector};
use crate::train::Dataset;

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const META_FILE: &str = "meta.json";

/// Sidecar describing a dataset and how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub edge_homophily: Option<f64>,
    /// Generator parameters for synthetic data.
    #[serde(default)]
    pub csbm: Option<CsbmParams>,
    pub generator: String,
}

impl DatasetMeta {
    pub fn describe(data: &Dataset, csbm: Option<CsbmParams>) -> Self {
        Self {
            num_nodes: data.graph.num_nodes(),
            num_edges: data.graph.num_edges(),
            num_classes: data.labels.num_classes(),
            feature_dim: data.features.cols(),
            edge_homophily: measured_edge_homophily(&data.graph, &data.labels).ok(),
            csbm,
            generator: format!("adgnn {}", env!("CARGO_PKG_VERSION")),
        }
    }
}

/// Node, edge and class counts plus edge homophily.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub edge_homophily: Option<f64>,
}

impl DatasetSummary {
    pub fn of(data: &Dataset) -> Self {
        Self {
            nodes: data.graph.num_nodes(),
            edges: data.graph.num_edges(),
            classes: data.labels.num_classes(),
            edge_homophily: measured_edge_homophily(&data.graph, &data.labels).ok(),
        }
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nodes={} edges={} classes={} edge_homophily=", self.nodes, self.edges, self.classes)?;
        match self.edge_homophily {
            Some(h) => write!(f, "{h:.4}"),
            None => write!(f, "n/a"),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Parses an edge list; ids must be below `num_nodes`.
pub fn parse_edges(text: &str, num_nodes: usize, path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(parse_err(path, i + 1, format!("expected two node ids, found {:?}", line)));
        }
        let mut ids = [0usize; 2];
        for (slot, f) in ids.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("invalid node id {f:?}")))?;
            if *slot >= num_nodes {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("node id {slot} out of range for {num_nodes} nodes"),
                ));
            }
        }
        edges.push((ids[0], ids[1]));
    }
    Ok(edges)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn record_line(r: &csv::StringRecord) -> usize {
    r.position().map_or(0, |p| p.line() as usize)
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for rec in csv_reader(text).records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record_line(&rec);
        if rec.len() != 1 {
            return Err(parse_err(path, line, format!("expected one label, found {} fields", rec.len())));
        }
        let v = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("invalid label {:?}", &rec[0])))?;
        out.push(v);
    }
    Ok(out)
}

pub fn parse_features(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in csv_reader(text).records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record_line(&rec);
        let width = *cols.get_or_insert(rec.len());
        if rec.len() != width {
            return Err(parse_err(path, line, format!("expected {width} columns, found {}", rec.len())));
        }
        for f in rec.iter() {
            let x: f64 = f
                .parse()
                .map_err(|_| parse_err(path, line, format!("invalid number {f:?}")))?;
            if !x.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value {f:?}")));
            }
            values.push(x);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Ok(Array2::from_shape_vec((rows, cols), values).expect("rows of equal width"))
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetSummary)> {
    let labels_path = dir.join(LABELS_FILE);
    let labels = parse_labels(&read(&labels_path)?, &labels_path)?;
    let n = labels.len();
    let meta_path = dir.join(META_FILE);
    let meta: Option<DatasetMeta> = if meta_path.exists() {
        Some(serde_json::from_str(&read(&meta_path)?).map_err(|e| {
            parse_err(&meta_path, e.line(), e.to_string())
        })?)
    } else {
        None
    };
    let labels = match &meta {
        Some(m) => LabelVector::new(labels, m.num_classes)?,
        None => LabelVector::from_labels(labels)?,
    };

    let edges_path = dir.join(EDGES_FILE);
    let edges = parse_edges(&read(&edges_path)?, n, &edges_path)?;
    let graph = Graph::build(n, &edges)?;

    let feat_path = dir.join(FEATURES_FILE);
    let features = parse_features(&read(&feat_path)?, &feat_path)?;
    if features.nrows() != n {
        return Err(Error::LengthMismatch {
            what: "feature rows (one per label line)",
            expected: n,
            actual: features.nrows(),
        });
    }
    let data = Dataset::new(graph, FeatureMatrix::new(features)?, labels)?;
    let summary = DatasetSummary::of(&data);
    Ok((data, summary))
}

/// Writes a dataset directory (created if needed). Floats use the shortest
/// representation that round-trips exactly.
pub fn write_dataset(dir: &Path, data: &Dataset, meta: &DatasetMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join(EDGES_FILE))?);
    for &(u, v) in data.graph.edges() {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join(FEATURES_FILE))?);
    for row in data.features.values().rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join(LABELS_FILE))?);
    for &y in data.labels.labels() {
        writeln!(w, "{y}")?;
    }
    w.flush()?;

    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_lines_accept_commas_comments_and_blanks() {
        let text = "# header\n0 1\n\n1,2  # trailing\n 2\t3 \n";
        let e = parse_edges(text, 4, Path::new("e")).unwrap();
        assert_eq!(e, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn parse_errors_report_line_numbers() {
        let p = Path::new("edges.txt");
        match parse_edges("0 1\n1 x\n", 3, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_edges("0 1\n\n# c\n0 9\n", 3, p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("out of range"));
            }
            other => panic!("{other:?}"),
        }
        match parse_features("1,2\n3,4\n5\n", Path::new("f")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_labels("0\n1\nfoo\n", Path::new("l")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn summary_display() {
        let g = Graph::build(3, &[(0, 1), (1, 2)]).unwrap();
        let data = Dataset::new(
            g,
            FeatureMatrix::new(Array2::zeros((3, 1))).unwrap(),
            LabelVector::new(vec![0, 0, 0], 2).unwrap(),
        )
        .unwrap();
        let s = DatasetSummary::of(&data);
        assert_eq!(s.to_string(), "nodes=3 edges=2 classes=2 edge_homophily=1.0000");
    }
}
