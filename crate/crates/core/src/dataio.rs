//! Dataset bundles on disk, split sampling, and result export.
//!
//! A bundle is a directory holding
//!
//! * `edges.tsv` — one undirected edge per line, two whitespace-separated
//!   node ids, either orientation; duplicates and self-loops are dropped,
//! * `features.csv` — `N` rows of `D` comma-separated reals, or
//!   `features_sparse.tsv` with `row col value` lines when `meta.json`
//!   sets `"sparse": true`,
//! * `labels.csv` — `N` class ids, one per line,
//! * `meta.json` — `{"name", "N", "D", "C"}` and optionally `"sparse"`,
//! * `splits.json` (optional) — a list of `{"train", "valid", "test"}`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BuildReport, DataSplit, Graph, GraphError, Labels};
use crate::linalg::DenseMatrix;
use crate::rng::{stream_rng, Stream};
use crate::synth::SynGraph;
use crate::theory::{EpsilonCurve, McEstimate};
use crate::trainer::{RunRecord, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Mismatch(String),
    #[error("{path}: non-finite feature at row {row}, column {col}")]
    NonFinite { path: PathBuf, row: usize, col: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("cannot sample split: {0}")]
    Split(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |err| DataError::Io {
        path: path.to_path_buf(),
        err,
    }
}

fn format_err(path: &Path, msg: impl fmt::Display) -> DataError {
    DataError::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    #[serde(rename = "N")]
    pub num_nodes: usize,
    #[serde(rename = "D")]
    pub num_features: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    #[serde(default)]
    pub sparse: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Labels,
    pub splits: Vec<DataSplit>,
}

impl DatasetBundle {
    pub fn new(name: impl Into<String>, graph: Graph, features: DenseMatrix, labels: Labels) -> Result<Self> {
        let b = Self {
            name: name.into(),
            graph,
            features,
            labels,
            splits: Vec::new(),
        };
        b.check()?;
        Ok(b)
    }

    pub fn from_syn(name: impl Into<String>, g: SynGraph) -> Self {
        Self::new(name, g.graph, g.features, g.labels).expect("generator output is consistent")
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    fn check(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n || self.labels.len() != n {
            return Err(DataError::Mismatch(format!(
                "graph has {n} nodes, features {} rows, labels {} entries",
                self.features.rows(),
                self.labels.len()
            )));
        }
        for s in &self.splits {
            s.check(n)?;
        }
        Ok(())
    }

    pub fn meta(&self, sparse: bool) -> Meta {
        Meta {
            name: self.name.clone(),
            num_nodes: self.num_nodes(),
            num_features: self.features.cols(),
            num_classes: self.labels.num_classes(),
            sparse,
        }
    }
}

/// Nonblank lines that are not `#` comments, with 1-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push((i + 1, t.to_string()));
        }
    }
    Ok(out)
}

fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.trim().parse().map_err(|_| DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse {field:?}"),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Reads and validates a bundle directory. Returns the bundle and what the
/// edge list cleanup removed.
pub fn load_bundle_with_report(dir: &Path) -> Result<(DatasetBundle, BuildReport)> {
    let meta: Meta = read_json(&dir.join("meta.json"))?;
    let n = meta.num_nodes;

    let edge_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (line, text) in data_lines(&edge_path)? {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(DataError::Parse {
                path: edge_path,
                line,
                msg: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        let u: usize = parse_field(&edge_path, line, fields[0])?;
        let v: usize = parse_field(&edge_path, line, fields[1])?;
        if u >= n || v >= n {
            return Err(DataError::Parse {
                path: edge_path,
                line,
                msg: format!("edge ({u}, {v}) references a node outside 0..{n}"),
            });
        }
        edges.push((u, v));
    }
    let (graph, report) = Graph::from_edges(n, edges)?;

    let features = if meta.sparse {
        read_sparse_features(&dir.join("features_sparse.tsv"), n, meta.num_features)?
    } else {
        read_dense_features(&dir.join("features.csv"), n, meta.num_features)?
    };

    let label_path = dir.join("labels.csv");
    let mut values = Vec::with_capacity(n);
    for (line, text) in data_lines(&label_path)? {
        values.push(parse_field::<usize>(&label_path, line, &text)?);
    }
    if values.len() != n {
        return Err(DataError::Mismatch(format!(
            "labels.csv has {} entries, meta.json says N = {n}",
            values.len()
        )));
    }
    let labels = Labels::new(values, meta.num_classes)?;

    let split_path = dir.join("splits.json");
    let splits: Vec<DataSplit> = if split_path.exists() {
        read_json(&split_path)?
    } else {
        Vec::new()
    };
    let bundle = DatasetBundle {
        name: meta.name,
        graph,
        features,
        labels,
        splits,
    };
    bundle.check()?;
    Ok((bundle, report))
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    load_bundle_with_report(dir).map(|(b, _)| b)
}

fn read_dense_features(path: &Path, n: usize, d: usize) -> Result<DenseMatrix> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e))?;
        if record.len() != d {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected {d} columns, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let x: f64 = parse_field(path, i + 1, field)?;
            if !x.is_finite() {
                return Err(DataError::NonFinite {
                    path: path.to_path_buf(),
                    row: i,
                    col: j,
                });
            }
            data.push(x);
        }
        rows += 1;
    }
    if rows != n {
        return Err(DataError::Mismatch(format!("{} has {rows} rows, meta.json says N = {n}", path.display())));
    }
    Ok(DenseMatrix::from_vec(n, d, data).expect("n·d entries"))
}

fn read_sparse_features(path: &Path, n: usize, d: usize) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(n, d);
    for (line, text) in data_lines(path)? {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected `row col value`, found {} fields", fields.len()),
            });
        }
        let r: usize = parse_field(path, line, fields[0])?;
        let c: usize = parse_field(path, line, fields[1])?;
        let x: f64 = parse_field(path, line, fields[2])?;
        if r >= n || c >= d {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("entry ({r}, {c}) outside {n}×{d}"),
            });
        }
        if !x.is_finite() {
            return Err(DataError::NonFinite {
                path: path.to_path_buf(),
                row: r,
                col: c,
            });
        }
        out.row_mut(r)[c] = x;
    }
    Ok(out)
}

/// Writes a bundle; `sparse` selects `features_sparse.tsv` (nonzeros
/// only) over `features.csv`.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path, sparse: bool) -> Result<()> {
    bundle.check()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = serde_json::to_string_pretty(&bundle.meta(sparse)).expect("meta serializes");
    write_text(&dir.join("meta.json"), &(meta + "\n"))?;

    let mut edges = String::new();
    for (u, v) in bundle.graph.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write_text(&dir.join("edges.tsv"), &edges)?;

    if sparse {
        let mut text = String::new();
        for r in 0..bundle.features.rows() {
            for (c, x) in bundle.features.row(r).iter().enumerate() {
                if *x != 0.0 {
                    text.push_str(&format!("{r}\t{c}\t{x}\n"));
                }
            }
        }
        write_text(&dir.join("features_sparse.tsv"), &text)?;
    } else {
        let path = dir.join("features.csv");
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| format_err(&path, e))?;
        for r in 0..bundle.features.rows() {
            w.write_record(bundle.features.row(r).iter().map(|x| x.to_string()))
                .map_err(|e| format_err(&path, e))?;
        }
        w.flush().map_err(io_err(&path))?;
    }

    let labels: String = bundle.labels.values().iter().map(|y| format!("{y}\n")).collect();
    write_text(&dir.join("labels.csv"), &labels)?;

    let split_path = dir.join("splits.json");
    if bundle.splits.is_empty() {
        if split_path.exists() {
            fs::remove_file(&split_path).map_err(io_err(&split_path))?;
        }
    } else {
        let text = serde_json::to_string(&bundle.splits).expect("splits serialize");
        write_text(&split_path, &(text + "\n"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// `per_class` training nodes from each class, then `valid` and `test`
    /// nodes from the rest.
    Planetoid { per_class: usize, valid: usize, test: usize },
    /// Fractions of all nodes for train and validation; the rest is test.
    Fractional { train: f64, valid: f64 },
}

impl SplitPolicy {
    pub const PLANETOID: SplitPolicy = SplitPolicy::Planetoid {
        per_class: 20,
        valid: 500,
        test: 1000,
    };
    pub const FRACTIONAL: SplitPolicy = SplitPolicy::Fractional { train: 0.5, valid: 0.25 };
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitPolicy::Planetoid { .. } => f.write_str("planetoid"),
            SplitPolicy::Fractional { .. } => f.write_str("fractional"),
        }
    }
}

impl FromStr for SplitPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "planetoid" => Ok(Self::PLANETOID),
            "fractional" => Ok(Self::FRACTIONAL),
            other => Err(format!("unknown split policy {other:?} (expected planetoid or fractional)")),
        }
    }
}

/// Random split; index lists come back sorted.
pub fn sample_splits(labels: &Labels, policy: SplitPolicy, seed: u64) -> Result<DataSplit> {
    let mut rng = stream_rng(seed, Stream::Split);
    let n = labels.len();
    let (mut train, mut valid, mut test) = match policy {
        SplitPolicy::Planetoid { per_class, valid, test } => {
            let mut train = Vec::new();
            let mut rest = Vec::new();
            for c in 0..labels.num_classes() {
                let mut members: Vec<usize> = (0..n).filter(|&v| labels.get(v) == c).collect();
                if members.len() < per_class {
                    return Err(DataError::Split(format!(
                        "class {c} has {} nodes, need {per_class}",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                train.extend_from_slice(&members[..per_class]);
                rest.extend_from_slice(&members[per_class..]);
            }
            rest.sort_unstable();
            rest.shuffle(&mut rng);
            if rest.len() < valid + test {
                return Err(DataError::Split(format!(
                    "{} nodes left after training, need {valid} + {test}",
                    rest.len()
                )));
            }
            let v = rest[..valid].to_vec();
            let t = rest[valid..valid + test].to_vec();
            (train, v, t)
        }
        SplitPolicy::Fractional { train, valid } => {
            if !(train > 0.0 && valid > 0.0 && train + valid < 1.0) {
                return Err(DataError::Split("fractions must be positive and sum below 1".into()));
            }
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            let n_train = (train * n as f64).round() as usize;
            let n_valid = (valid * n as f64).round() as usize;
            let rest = all.split_off(n_train);
            let (v, t) = rest.split_at(n_valid.min(rest.len()));
            (all, v.to_vec(), t.to_vec())
        }
    };
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(DataSplit::new(train, valid, test, n)?)
}

/// A header plus string rows, written as RFC 4180 CSV.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}

pub fn write_csv(table: &Table, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| DataError::Mismatch(format!("csv: {e}"));
    w.write_record(&table.header).map_err(err)?;
    for r in &table.rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| DataError::Mismatch(format!("csv: {e}")))?;
    Ok(())
}

pub fn export_csv(table: &Table, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_csv(table, file).map_err(|e| format_err(path, e))
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let mut text = String::new();
    fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_string(&mut text)
        .map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| format_err(path, e))?.iter().map(String::from).collect();
    let mut table = Table { header, rows: Vec::new() };
    for rec in r.records() {
        table.rows.push(rec.map_err(|e| format_err(path, e))?.iter().map(String::from).collect());
    }
    Ok(table)
}

pub fn export_run(record: &RunRecord, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(record).map_err(|e| format_err(path, e))?;
    write_text(path, &(text + "\n"))
}

pub fn load_run(path: &Path) -> Result<RunRecord> {
    read_json(path)
}

pub fn metrics_table(record: &RunRecord) -> Table {
    let mut t = Table::new(METRICS_HEADER);
    for row in record.metrics_rows() {
        t.push(row);
    }
    t
}

/// `h, eps_agg, eps_raw`, plus Monte-Carlo columns when estimates (one per
/// grid point) are given.
pub fn epsilon_curve_table(curve: &EpsilonCurve, mc: Option<&[McEstimate]>) -> Table {
    let mut header = vec!["h", "eps_agg", "eps_raw"];
    if mc.is_some() {
        header.extend(["eps_mc", "mc_stderr", "mc_homophily"]);
    }
    let mut t = Table::new(header);
    for (i, (h, agg, raw)) in curve.rows().enumerate() {
        let mut row = vec![h.to_string(), agg.to_string(), raw.to_string()];
        if let Some(mc) = mc {
            row.extend([mc[i].eps.to_string(), mc[i].stderr.to_string(), mc[i].homophily.to_string()]);
        }
        t.push(row);
    }
    t
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the payload, in f64 values.
    offset: usize,
}

/// Layout: u64 little-endian header length, JSON header naming each
/// tensor's shape and offset, then all values as little-endian f64.
pub fn save_checkpoint(tensors: &[(String, DenseMatrix)], path: &Path) -> Result<()> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
                offset,
            };
            offset += t.data().len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&CheckpointHeader { tensors: entries }).expect("header serializes");
    let mut bytes = Vec::with_capacity(8 + header.len() + 8 * offset);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for (_, t) in tensors {
        for x in t.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, DenseMatrix)>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |msg: &str| format_err(path, msg);
    if bytes.len() < 8 {
        return Err(bad("truncated checkpoint"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let payload_start = 8usize.checked_add(header_len).filter(|&s| s <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..payload_start]).map_err(|e| format_err(path, e))?;
    let payload = &bytes[payload_start..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    header
        .tensors
        .into_iter()
        .map(|e| {
            let end = e.offset + e.rows * e.cols;
            let data = values.get(e.offset..end).ok_or_else(|| bad("tensor extends past the payload"))?;
            Ok((e.name, DenseMatrix::from_vec(e.rows, e.cols, data.to_vec()).expect("rows·cols values")))
        })
        .collect()
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_kv(&text).map_err(|msg| format_err(path, msg))
}

pub fn write_kv_file(pairs: &[(String, String)], path: &Path) -> Result<()> {
    let text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::small;
    use crate::synth::{gen_homophily_graph, SynSpec};
    use crate::trainer::{EpochMetrics, Phase, Schedule, TrainConfig};
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn toy_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "meta.json", r#"{"name": "toy", "N": 3, "D": 2, "C": 2}"#);
        write(dir.path(), "edges.tsv", "0\t1\n2 1\n# comment\n1\t0\n");
        write(dir.path(), "features.csv", "1,0\n0,1\n0.5,0.5\n");
        write(dir.path(), "labels.csv", "0\n1\n1\n");
        dir
    }

    #[test]
    fn loads_toy_bundle() {
        let dir = toy_dir();
        let (b, report) = load_bundle_with_report(dir.path()).unwrap();
        assert_eq!(b.num_nodes(), 3);
        assert_eq!(b.name, "toy");
        assert_eq!(b.graph.num_edges(), 2);
        assert_eq!(report.duplicates_removed, 1);
        assert_eq!(b.features.row(2), &[0.5, 0.5]);
        assert!(b.splits.is_empty());
    }

    #[test]
    fn rejects_bad_bundles() {
        let dir = toy_dir();
        write(dir.path(), "edges.tsv", "0\t3\n");
        assert!(matches!(load_bundle(dir.path()), Err(DataError::Parse { .. })));

        let dir = toy_dir();
        write(dir.path(), "features.csv", "1,0\n0,NaN\n0.5,0.5\n");
        assert!(matches!(load_bundle(dir.path()), Err(DataError::NonFinite { row: 1, col: 1, .. })));

        let dir = toy_dir();
        write(dir.path(), "labels.csv", "0\n1\n");
        assert!(matches!(load_bundle(dir.path()), Err(DataError::Mismatch(_))));

        let dir = toy_dir();
        fs::remove_file(dir.path().join("features.csv")).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(DataError::Io { .. })));

        let dir = toy_dir();
        write(dir.path(), "labels.csv", "0\n1\n5\n");
        assert!(matches!(load_bundle(dir.path()), Err(DataError::Graph(_))));
    }

    #[test]
    fn duplicate_edge_lines_match_unique_pair_count() {
        let dir = toy_dir();
        let lines = ["0 1", "1 0", "0 1", "1 2", "2 1", "2 2"];
        write(dir.path(), "edges.tsv", &lines.join("\n"));
        let mut unique = std::collections::BTreeSet::new();
        for l in lines {
            let v: Vec<usize> = l.split(' ').map(|x| x.parse().unwrap()).collect();
            if v[0] != v[1] {
                unique.insert((v[0].min(v[1]), v[0].max(v[1])));
            }
        }
        assert_eq!(load_bundle(dir.path()).unwrap().graph.num_edges(), unique.len());
    }

    #[test]
    fn sparse_features() {
        let dir = toy_dir();
        write(dir.path(), "meta.json", r#"{"name": "toy", "N": 3, "D": 2, "C": 2, "sparse": true}"#);
        write(dir.path(), "features_sparse.tsv", "0 0 1\n2 1 0.5\n");
        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(b.features, DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.5]]));
    }

    #[test]
    fn save_load_round_trip() {
        let spec = SynSpec {
            num_nodes: 100,
            avg_degree: 4.0,
            ..SynSpec::default()
        };
        let mut b = DatasetBundle::from_syn("syn", gen_homophily_graph(&spec).unwrap());
        b.splits.push(sample_splits(&b.labels, SplitPolicy::FRACTIONAL, 3).unwrap());
        for sparse in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            save_bundle(&b, dir.path(), sparse).unwrap();
            assert_eq!(load_bundle(dir.path()).unwrap(), b);
        }
    }

    #[test]
    fn planetoid_split() {
        let labels = Labels::new((0..2100).map(|v| v % 7).collect(), 7).unwrap();
        let s = sample_splits(&labels, SplitPolicy::PLANETOID, 0).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (140, 500, 1000));
        for c in 0..7 {
            assert_eq!(s.train.iter().filter(|&&v| labels.get(v) == c).count(), 20);
        }
        assert_eq!(s, sample_splits(&labels, SplitPolicy::PLANETOID, 0).unwrap());
        assert_ne!(s, sample_splits(&labels, SplitPolicy::PLANETOID, 1).unwrap());
        let tiny = Labels::new(vec![0, 1, 1], 2).unwrap();
        assert!(matches!(sample_splits(&tiny, SplitPolicy::PLANETOID, 0), Err(DataError::Split(_))));
    }

    #[test]
    fn fractional_split_sizes() {
        let labels = Labels::new((0..1490).map(|v| v % 5).collect(), 5).unwrap();
        let s = sample_splits(&labels, SplitPolicy::FRACTIONAL, 9).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (745, 373, 372));
        assert_eq!("fractional".parse::<SplitPolicy>().unwrap(), SplitPolicy::FRACTIONAL);
        assert!("random".parse::<SplitPolicy>().is_err());
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_deterministic(n in 10usize..300, c in 2usize..6, seed in any::<u64>()) {
            let labels = Labels::new((0..n).map(|v| v % c).collect(), c).unwrap();
            let s = sample_splits(&labels, SplitPolicy::FRACTIONAL, seed).unwrap();
            prop_assert!(s.check(n).is_ok());
            prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), n);
            prop_assert_eq!(&s, &sample_splits(&labels, SplitPolicy::FRACTIONAL, seed).unwrap());
        }
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let empty = Table::new(["a", "b"]);
        export_csv(&empty, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n");
        let mut t = Table::new(["name", "value"]);
        t.push(vec!["with,comma".into(), "1".into()]);
        t.push(vec!["quote\"d".into(), "2".into()]);
        export_csv(&t, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "name,value\n\"with,comma\",1\n\"quote\"\"d\",2\n");
        assert_eq!(read_csv(&path).unwrap(), t);
    }

    #[test]
    fn curve_table_schema() {
        let spec = crate::synth::GaussianClassSpec {
            mu1: 0.0,
            sigma1: 1.0,
            mu2: 2.0,
            sigma2: 1.0,
            degree: 5,
            homophily: 0.0,
        };
        let c = crate::theory::epsilon_curve(&spec, &crate::theory::uniform_grid(10)).unwrap();
        let t = epsilon_curve_table(&c, None);
        assert_eq!(t.header, vec!["h", "eps_agg", "eps_raw"]);
        assert_eq!(t.rows.len(), 11);
        assert_eq!(t.rows[5], vec!["0.5", "1", &c.eps_raw.to_string()]);
    }

    #[test]
    fn run_record_round_trip() {
        let record = RunRecord {
            model: "ingnn".into(),
            config: TrainConfig::default(),
            schedule: Schedule::default(),
            seed: 4,
            epochs: vec![EpochMetrics {
                epoch: 1,
                phase: Phase::W,
                objective: 1.6094379124341003,
                train_loss: 1.5,
                train_acc: 0.25,
                valid_loss: 1.55,
                valid_acc: 0.2,
            }],
            best_epoch: 1,
            best_valid_acc: 0.2,
            fusion_logits: vec![0.1, -0.2, 0.3],
            fusion_weights: vec![0.3, 0.3, 0.4],
            importance: Some([0.2, 0.3, 0.5]),
            test_acc: 0.3,
            wall_time_secs: 1.25,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        export_run(&record, &path).unwrap();
        assert_eq!(load_run(&path).unwrap(), record);
        let diverged = RunRecord {
            test_acc: f64::NAN,
            ..record.clone()
        };
        export_run(&diverged, &path).unwrap();
        assert!(load_run(&path).unwrap().test_acc.is_nan());
        let metrics = metrics_table(&record);
        assert_eq!(metrics.rows[0][1], "w");
    }

    #[test]
    fn checkpoint_round_trip() {
        let tensors = vec![
            ("a".to_string(), DenseMatrix::from_rows(&[[1.0, -2.5], [f64::MIN_POSITIVE, 3.0]])),
            ("empty".to_string(), DenseMatrix::zeros(0, 3)),
            ("b".to_string(), DenseMatrix::from_rows(&[[0.1, 0.2, 0.3]])),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&tensors, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), tensors);
        fs::write(&path, [1u8, 2, 3]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn kv_files() {
        let pairs = parse_kv("# comment\nhidden = 32\n\nlr=0.001\n").unwrap();
        assert_eq!(pairs, vec![("hidden".into(), "32".into()), ("lr".into(), "0.001".into())]);
        assert!(parse_kv("novalue\n").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.kv");
        write_kv_file(&pairs, &path).unwrap();
        assert_eq!(read_kv_file(&path).unwrap(), pairs);
    }

    #[test]
    fn bundle_rejects_inconsistent_members() {
        let g = small::path(3);
        let x = DenseMatrix::zeros(2, 1);
        let y = Labels::new(vec![0, 1, 0], 2).unwrap();
        assert!(DatasetBundle::new("bad", g, x, y).is_err());
    }
}
