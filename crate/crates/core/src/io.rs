//! Plain-text formats: dense matrices, contiguity edge lists and key-value
//! configuration files.
//!
//! Matrix files start with a `rows cols` header followed by row-major
//! values separated by whitespace. Lines starting with `#` are comments.
//! Values are written with 17 significant digits so that a written matrix
//! parses back bit-identically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::SerialPreset;
use crate::ridge::Penalty;
use crate::spatial::{row_normalize, ContiguityMatrix};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn parse_number<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty matrix file"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(hline, "header must be `<rows> <cols>`"));
    }
    let rows: usize = parse_number(dims[0], hline, "row count")?;
    let cols: usize = parse_number(dims[1], hline, "column count")?;
    let expected = rows * cols;
    let mut data = Vec::with_capacity(expected);
    let mut last = hline;
    for (ln, l) in lines {
        last = ln;
        for tok in l.split_whitespace() {
            if data.len() == expected {
                return Err(parse_err(ln, format!("more than {expected} values")));
            }
            let v: f64 = parse_number(tok, ln, "number")?;
            if !v.is_finite() {
                return Err(parse_err(ln, format!("non-finite value `{tok}`")));
            }
            data.push(v);
        }
    }
    if data.len() != expected {
        return Err(parse_err(last, format!("expected {expected} values, found {}", data.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{}", format_number(*v)).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Machine format for one number: 17 significant digits.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| with_path(e, path))?;
    parse_matrix(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m)).map_err(|e| with_path(e, path))
}

/// A column or row matrix file read as a vector.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    match m.shape() {
        (_, 1) => Ok(m.column(0).into_owned()),
        (1, _) => Ok(m.row(0).transpose()),
        (r, c) => Err(Error::Shape(format!("{} holds a {r}×{c} matrix, expected a vector", path.display()))),
    }
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Contiguity as an edge list (`n <count>` header, then 1-based `i j`
/// pairs) or as a dense 0/1 matrix.
pub fn parse_contiguity(text: &str) -> Result<ContiguityMatrix> {
    let mut lines = content_lines(text);
    let Some((hline, header)) = lines.next() else {
        return Err(parse_err(1, "empty contiguity file"));
    };
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.first() != Some(&"n") {
        let dense = parse_matrix(text)?;
        return ContiguityMatrix::new(dense);
    }
    if toks.len() != 2 {
        return Err(parse_err(hline, "header must be `n <count>`"));
    }
    let n: usize = parse_number(toks[1], hline, "region count")?;
    let mut edges = Vec::new();
    for (ln, l) in lines {
        let pair: Vec<&str> = l.split_whitespace().collect();
        if pair.len() != 2 {
            return Err(parse_err(ln, "expected an `i j` pair"));
        }
        let i: usize = parse_number(pair[0], ln, "region index")?;
        let j: usize = parse_number(pair[1], ln, "region index")?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(parse_err(ln, format!("region index outside 1..={n}")));
        }
        if i == j {
            return Err(parse_err(ln, format!("self-loop at region {i}")));
        }
        edges.push((i - 1, j - 1));
    }
    ContiguityMatrix::from_edges(n, &edges)
}

pub fn read_contiguity(path: &Path) -> Result<ContiguityMatrix> {
    let text = fs::read_to_string(path).map_err(|e| with_path(e, path))?;
    parse_contiguity(&text)
}

/// Spatial weights from a file. Edge lists are always row-normalized;
/// dense files are taken as weights unless `normalize` asks to treat them
/// as contiguity.
pub fn read_weights(path: &Path, normalize: bool) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| with_path(e, path))?;
    let is_edge_list = content_lines(&text).next().is_some_and(|(_, l)| l.starts_with('n'));
    if is_edge_list || normalize {
        Ok(row_normalize(&parse_contiguity(&text)?).matrix)
    } else {
        parse_matrix(&text)
    }
}

/// `zero`, `ridge:λ`, `shrink:δ`, `file:path` or a bare path.
pub fn parse_penalty(spec: &str, base: &Path) -> Result<Penalty> {
    let spec = spec.trim();
    let num = |s: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::Config(format!("invalid penalty parameter `{s}`")))
    };
    match spec.split_once(':') {
        None if spec == "zero" => Ok(Penalty::Zero),
        Some(("ridge", v)) => Ok(Penalty::OrdinaryRidge(num(v)?)),
        Some(("shrink", v)) => Ok(Penalty::Shrinkage(num(v)?)),
        Some(("file", p)) => Ok(Penalty::Custom(read_matrix(&resolve(base, p))?)),
        _ => Ok(Penalty::Custom(read_matrix(&resolve(base, spec))?)),
    }
}

/// A serial-correlation `A`: a preset name or a matrix file.
pub fn load_serial_a(spec: &str, n: usize, base: &Path) -> Result<DMatrix<f64>> {
    match SerialPreset::parse(spec.trim()) {
        Some(p) => Ok(p.matrix(n)),
        None => read_matrix(&resolve(base, spec.trim())),
    }
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() { path.to_path_buf() } else { base.join(path) }
}

/// Parsed `key = value` file. Keys are unique; relative paths resolve
/// against `base`.
#[derive(Debug, Clone)]
pub struct KeyValues {
    entries: Vec<(String, String, usize)>,
    pub base: PathBuf,
}

impl KeyValues {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (ln, l) in content_lines(text) {
            let (k, v) = l.split_once('=').ok_or_else(|| parse_err(ln, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(parse_err(ln, "empty key"));
            }
            if entries.iter().any(|(e, _, _)| e == k) {
                return Err(parse_err(ln, format!("duplicate key `{k}`")));
            }
            entries.push((k.to_string(), v.to_string(), ln));
        }
        Ok(KeyValues { entries, base: base.to_path_buf() })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| with_path(e, path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    fn line(&self, key: &str) -> usize {
        self.entries.iter().find(|(k, _, _)| k == key).map_or(0, |(_, _, l)| *l)
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {}: invalid value `{v}` for `{key}`", self.line(key)))),
        }
    }

    pub fn require_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.parse_value(key)?.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    /// Comma-separated list of numbers.
    pub fn parse_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("line {}: invalid number `{}` in `{key}`", self.line(key), t.trim())))
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        Ok(resolve(&self.base, self.require(key)?))
    }

    pub fn matrix(&self, key: &str) -> Result<DMatrix<f64>> {
        read_matrix(&self.path(key)?)
    }

    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (k, _, l) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("line {l}: unknown key `{k}`")));
            }
        }
        Ok(())
    }
}
