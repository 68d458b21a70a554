//! File formats: dense CSV for matrices and points, JSON and Newick for
//! trees, CSV for layered solutions and labelings, and the comparison table
//! consumed by external plotting.
//!
//! Reals are written with 17 significant digits, which round-trips `f64`
//! exactly.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::baselines::{FlatClustering, PointSet};
use crate::lp::{LayeredSolution, SolutionMode};
use crate::matrix::{SimilarityMatrix, Ultrametric};
use crate::pairs::PairTable;
use crate::tree::{HierTree, Nested};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tree: {0}")]
    Tree(#[from] crate::tree::TreeError),
    #[error("matrix: {0}")]
    Matrix(#[from] crate::matrix::MatrixError),
    #[error("points: {0}")]
    Points(#[from] crate::baselines::BaselineError),
}

fn parse_err(line: usize, col: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        col,
        msg: msg.into(),
    }
}

/// 17 significant digits; parses back to the identical f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(tok: &str, line: usize, col: usize) -> Result<f64, IoError> {
    tok.trim()
        .parse()
        .map_err(|_| parse_err(line, col, format!("bad number {tok:?}")))
}

fn parse_usize(tok: &str, line: usize, col: usize) -> Result<usize, IoError> {
    tok.trim()
        .parse()
        .map_err(|_| parse_err(line, col, format!("bad integer {tok:?}")))
}

fn header_count(text: &str, key: &str) -> Result<(usize, usize), IoError> {
    // returns (value, lines consumed)
    let first = text.lines().next().ok_or_else(|| parse_err(1, 1, "empty file"))?;
    let rest = first.trim();
    let Some(v) = rest.strip_prefix(&format!("{key}=")) else {
        return Err(parse_err(1, 1, format!("expected header {key}=<count>")));
    };
    Ok((parse_usize(v, 1, 1)?, 1))
}

fn dense_to_csv(n: usize, get: impl Fn(usize, usize) -> f64, key: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{key}={n}");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| fmt_f64(get(i, j))).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn dense_from_csv(text: &str) -> Result<PairTable, IoError> {
    let (n, skip) = header_count(text, "n")?;
    if n < 2 {
        return Err(parse_err(1, 1, "need n >= 2"));
    }
    let mut table = PairTable::filled(n, 0.0);
    let mut rows = 0usize;
    for (ix, line) in text.lines().skip(skip).enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = ix + skip + 1;
        if rows >= n {
            return Err(parse_err(lineno, 1, "too many rows"));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n {
            return Err(parse_err(
                lineno,
                1,
                format!("expected {n} fields, found {}", fields.len()),
            ));
        }
        for (j, tok) in fields.iter().enumerate() {
            let v = parse_f64(tok, lineno, j + 1)?;
            if j > rows {
                table.set(rows, j, v);
            } else if j < rows && (table.get(rows, j) - v).abs() > 1e-12 {
                return Err(parse_err(
                    lineno,
                    j + 1,
                    format!("asymmetric entry ({rows},{j}): {} vs {v}", table.get(rows, j)),
                ));
            } else if j == rows && v != 0.0 {
                return Err(parse_err(lineno, j + 1, "nonzero diagonal"));
            }
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(rows + skip, 1, format!("expected {n} rows, found {rows}")));
    }
    Ok(table)
}

pub fn similarity_to_csv(m: &SimilarityMatrix) -> String {
    dense_to_csv(m.n(), |i, j| m.get(i, j), "n")
}

pub fn similarity_from_csv(text: &str) -> Result<SimilarityMatrix, IoError> {
    Ok(SimilarityMatrix::new(dense_from_csv(text)?)?)
}

pub fn ultrametric_to_csv(d: &Ultrametric) -> String {
    dense_to_csv(d.n(), |i, j| d.get(i, j), "n")
}

pub fn ultrametric_from_csv(text: &str) -> Result<Ultrametric, IoError> {
    Ok(Ultrametric::new(dense_from_csv(text)?)?)
}

/// Points as CSV: `dims=<d>` header, one point per row, with an optional
/// trailing integer label column routed to a ground-truth clustering.
pub fn points_to_csv(points: &PointSet, labels: Option<&FlatClustering>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dims={}", points.dim());
    for i in 0..points.n() {
        let mut row: Vec<String> = points.point(i).iter().map(|&v| fmt_f64(v)).collect();
        if let Some(l) = labels {
            row.push(l.label(i).to_string());
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn points_from_csv(text: &str) -> Result<(PointSet, Option<FlatClustering>), IoError> {
    let (dims, skip) = {
        let first = text.lines().next().ok_or_else(|| parse_err(1, 1, "empty file"))?;
        let Some(v) = first.trim().strip_prefix("dims=") else {
            return Err(parse_err(1, 1, "expected header dims=<d>"));
        };
        (parse_usize(v, 1, 1)?, 1)
    };
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    let mut labeled = None;
    for (ix, line) in text.lines().skip(skip).enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = ix + skip + 1;
        let fields: Vec<&str> = line.split(',').collect();
        let has_label = match fields.len() {
            l if l == dims => false,
            l if l == dims + 1 => true,
            l => {
                return Err(parse_err(
                    lineno,
                    1,
                    format!("expected {dims} or {} fields, found {l}", dims + 1),
                ))
            }
        };
        match labeled {
            None => labeled = Some(has_label),
            Some(prev) if prev != has_label => {
                return Err(parse_err(lineno, fields.len(), "inconsistent label column"))
            }
            _ => {}
        }
        let mut p = Vec::with_capacity(dims);
        for (j, tok) in fields[..dims].iter().enumerate() {
            p.push(parse_f64(tok, lineno, j + 1)?);
        }
        pts.push(p);
        if has_label {
            labels.push(parse_usize(fields[dims], lineno, dims + 1)?);
        }
    }
    let points = PointSet::new(pts)?;
    let truth = labeled
        .unwrap_or(false)
        .then(|| FlatClustering::new(labels));
    Ok((points, truth))
}

pub fn tree_to_json(tree: &HierTree) -> String {
    serde_json::to_string_pretty(&tree.to_nested()).expect("nested trees serialize")
}

pub fn tree_from_json(text: &str) -> Result<HierTree, IoError> {
    let nested: Nested = serde_json::from_str(text)?;
    Ok(HierTree::from_nested(&nested)?)
}

/// Newick text with leaf indices as names: `((0,1),2);`
pub fn tree_to_newick(tree: &HierTree) -> String {
    fn write_node(tree: &HierTree, id: usize, out: &mut String) {
        let node = tree.node(id);
        match node.leaf {
            Some(ix) => {
                let _ = write!(out, "{ix}");
            }
            None => {
                out.push('(');
                for (c_ix, &c) in node.children.iter().enumerate() {
                    if c_ix > 0 {
                        out.push(',');
                    }
                    write_node(tree, c, out);
                }
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    write_node(tree, tree.root(), &mut out);
    out.push(';');
    out
}

pub fn tree_from_newick(text: &str) -> Result<HierTree, IoError> {
    struct P<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl P<'_> {
        fn peek(&self) -> Option<u8> {
            self.bytes.get(self.pos).copied()
        }
        fn bump(&mut self) -> Option<u8> {
            let b = self.peek();
            self.pos += 1;
            b
        }
        fn err(&self, msg: impl Into<String>) -> IoError {
            parse_err(1, self.pos + 1, msg)
        }
        fn node(&mut self) -> Result<Nested, IoError> {
            match self.peek() {
                Some(b'(') => {
                    self.bump();
                    let mut children = vec![self.node()?];
                    while self.peek() == Some(b',') {
                        self.bump();
                        children.push(self.node()?);
                    }
                    if self.bump() != Some(b')') {
                        return Err(self.err("expected ')'"));
                    }
                    Ok(Nested::Internal { children })
                }
                Some(c) if c.is_ascii_digit() => {
                    let start = self.pos;
                    while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                        self.bump();
                    }
                    let leaf: usize = std::str::from_utf8(&self.bytes[start..self.pos])
                        .unwrap()
                        .parse()
                        .map_err(|_| self.err("bad leaf index"))?;
                    Ok(Nested::Leaf { leaf })
                }
                other => Err(self.err(format!("unexpected {other:?}"))),
            }
        }
    }
    let mut p = P {
        bytes: text.trim().as_bytes(),
        pos: 0,
    };
    let nested = p.node()?;
    if p.bump() != Some(b';') {
        return Err(p.err("expected trailing ';'"));
    }
    Ok(HierTree::from_nested(&nested)?)
}

/// Layered solution CSV: `n=<n>,layers=<m>` then a `t,i,j,value` table over
/// all pairs and layers.
pub fn solution_to_csv(sol: &LayeredSolution) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n={},layers={}", sol.n(), sol.layer_count());
    let _ = writeln!(out, "t,i,j,value");
    for (t, i, j, v) in sol.entries() {
        let _ = writeln!(out, "{t},{i},{j},{}", fmt_f64(v));
    }
    out
}

pub fn solution_from_csv(text: &str) -> Result<LayeredSolution, IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, 1, "empty file"))?;
    let (n, layers) = {
        let parts: Vec<&str> = header.trim().split(',').collect();
        if parts.len() != 2 {
            return Err(parse_err(1, 1, "expected n=<n>,layers=<m>"));
        }
        let n = parts[0]
            .strip_prefix("n=")
            .ok_or_else(|| parse_err(1, 1, "expected n=<n>"))?;
        let m = parts[1]
            .strip_prefix("layers=")
            .ok_or_else(|| parse_err(1, 2, "expected layers=<m>"))?;
        (parse_usize(n, 1, 1)?, parse_usize(m, 1, 2)?)
    };
    let mut tables = vec![PairTable::filled(n, 0.0); layers];
    for (ix, line) in lines {
        let lineno = ix + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed == "t,i,j,value" {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(lineno, 1, "expected t,i,j,value"));
        }
        let t = parse_usize(fields[0], lineno, 1)?;
        let i = parse_usize(fields[1], lineno, 2)?;
        let j = parse_usize(fields[2], lineno, 3)?;
        let v = parse_f64(fields[3], lineno, 4)?;
        if t == 0 || t > layers || i >= n || j >= n || i == j {
            return Err(parse_err(lineno, 1, format!("indices out of range: {t},{i},{j}")));
        }
        tables[t - 1].set(i, j, v);
    }
    let binary = tables
        .iter()
        .all(|l| l.values().iter().all(|&v| v == 0.0 || v == 1.0));
    Ok(LayeredSolution::new(
        n,
        tables,
        if binary {
            SolutionMode::Binary
        } else {
            SolutionMode::Fractional
        },
    ))
}

pub fn labels_to_csv(labels: &FlatClustering) -> String {
    let mut out = String::from("point,label\n");
    for i in 0..labels.n() {
        let _ = writeln!(out, "{i},{}", labels.label(i));
    }
    out
}

pub fn labels_from_csv(text: &str) -> Result<FlatClustering, IoError> {
    let mut raw = Vec::new();
    for (ix, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed == "point,label" {
            continue;
        }
        let lineno = ix + 1;
        let (p, l) = trimmed
            .split_once(',')
            .ok_or_else(|| parse_err(lineno, 1, "expected point,label"))?;
        let p = parse_usize(p, lineno, 1)?;
        let l = parse_usize(l, lineno, 2)?;
        if p != raw.len() {
            return Err(parse_err(lineno, 1, "points must appear in order"));
        }
        raw.push(l);
    }
    Ok(FlatClustering::new(raw))
}

/// One row of the comparison table the `compare` subcommand emits.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub dataset: String,
    pub algorithm: String,
    pub kernel: String,
    pub f: String,
    pub err: f64,
}

pub fn comparison_to_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("dataset,algorithm,kernel,f,err\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.dataset,
            r.algorithm,
            r.kernel,
            r.f,
            fmt_f64(r.err)
        );
    }
    out
}

pub fn write_file(path: impl AsRef<Path>, content: &str) -> Result<(), IoError> {
    Ok(std::fs::write(path, content)?)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<String, IoError> {
    Ok(std::fs::read_to_string(path)?)
}
