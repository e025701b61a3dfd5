//! Readers for the tabular input formats and atomic file output.
//!
//! * edge list: `src,dst[,weight]` (optional header row `src,dst[,weight]`)
//! * node covariates: header `id,<col>...`; non-numeric columns are treated
//!   as categorical and expanded to indicators, first sorted level omitted
//! * outcome: header `id,y`
//!
//! Node order is the order of the outcome file. Every reader error names the
//! file and line.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::latent::ColumnKind;
use crate::net::Adjacency;

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::InvalidInput(format!("{}: {e}", path.display()))
        })
}

fn open(path: &Path, has_headers: bool) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn bad(path: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{}:{line}: {msg}", path.display()))
}

/// Outcome file `id,y`; returns node ids in file order and the outcome.
pub fn read_outcome(path: &Path) -> Result<(Vec<String>, DVector<f64>)> {
    let mut rdr = open(path, true)?;
    let header = rdr.headers().map_err(|e| bad(path, 1, e))?.clone();
    if header.len() != 2 {
        return Err(bad(path, 1, format!("expected header `id,y`, found {} columns", header.len())));
    }
    let mut ids = Vec::new();
    let mut ys = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(path, 0, e))?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(bad(path, line, format!("expected 2 fields (id,y), found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(bad(path, line, format!("duplicate node id `{id}`")));
        }
        let y: f64 = rec[1].parse().map_err(|_| bad(path, line, format!("`{}` is not a number", &rec[1])))?;
        if !y.is_finite() {
            return Err(bad(path, line, "outcome must be finite"));
        }
        ids.push(id);
        ys.push(y);
    }
    if ids.len() < 2 {
        return Err(bad(path, 1, "need at least 2 nodes"));
    }
    Ok((ids, DVector::from_vec(ys)))
}

/// First column of a CSV whose header starts with `id` (an outcome or
/// covariates file), in file order.
pub fn read_node_ids(path: &Path) -> Result<Vec<String>> {
    let mut rdr = open(path, true)?;
    let header = rdr.headers().map_err(|e| bad(path, 1, e))?.clone();
    if header.is_empty() || &header[0] != "id" {
        return Err(bad(path, 1, "header must start with `id`"));
    }
    let mut ids = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(path, 0, e))?;
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(bad(path, line_of(&rec), format!("duplicate node id `{id}`")));
        }
        ids.push(id);
    }
    if ids.len() < 2 {
        return Err(bad(path, 1, "need at least 2 nodes"));
    }
    Ok(ids)
}

/// Edge list over the given node ids. Repeated edges accumulate weight.
pub fn read_edge_list(path: &Path, ids: &[String]) -> Result<Adjacency> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = ids.len();
    let mut m = DMatrix::zeros(n, n);
    let mut rdr = open(path, false)?;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(path, 0, e))?;
        let line = line_of(&rec);
        if k == 0 && rec.get(0) == Some("src") {
            continue;
        }
        if rec.len() != 2 && rec.len() != 3 {
            return Err(bad(path, line, format!("expected `src,dst[,weight]`, found {} fields", rec.len())));
        }
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| bad(path, line, format!("unknown node id `{s}`")))
        };
        let (i, j) = (lookup(&rec[0])?, lookup(&rec[1])?);
        if i == j {
            return Err(bad(path, line, format!("self-loop on `{}`", &rec[0])));
        }
        let w: f64 = if rec.len() == 3 {
            rec[2].parse().map_err(|_| bad(path, line, format!("`{}` is not a weight", &rec[2])))?
        } else {
            1.0
        };
        if !(w >= 0.0) || !w.is_finite() {
            return Err(bad(path, line, format!("weight must be finite and non-negative, got {w}")));
        }
        m[(i, j)] += w;
    }
    Adjacency::new(m)?.with_labels(ids.to_vec())
}

/// Covariates aligned to `ids`, without an intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub values: DMatrix<f64>,
    pub names: Vec<String>,
    /// Per output column; indicator columns are `Categorical`.
    pub kinds: Vec<ColumnKind>,
}

impl Covariates {
    pub fn empty(n: usize) -> Self {
        Self { values: DMatrix::zeros(n, 0), names: Vec::new(), kinds: Vec::new() }
    }

    /// Design matrix with a leading intercept column.
    pub fn design(&self) -> (DMatrix<f64>, Vec<String>) {
        let n = self.values.nrows();
        let mut x = DMatrix::from_element(n, self.values.ncols() + 1, 1.0);
        x.columns_mut(1, self.values.ncols()).copy_from(&self.values);
        let mut names = vec!["(intercept)".to_string()];
        names.extend(self.names.iter().cloned());
        (x, names)
    }
}

pub fn read_covariates(path: &Path, ids: &[String], standardize: bool) -> Result<Covariates> {
    let mut rdr = open(path, true)?;
    let header = rdr.headers().map_err(|e| bad(path, 1, e))?.clone();
    if header.is_empty() || &header[0] != "id" {
        return Err(bad(path, 1, "header must start with `id`"));
    }
    let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows: HashMap<String, Vec<String>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(path, 0, e))?;
        let line = line_of(&rec);
        if rec.len() != header.len() {
            return Err(bad(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let id = rec[0].to_string();
        if rows.insert(id.clone(), rec.iter().skip(1).map(str::to_string).collect()).is_some() {
            return Err(bad(path, line, format!("duplicate node id `{id}`")));
        }
    }
    for id in ids {
        if !rows.contains_key(id) {
            return Err(bad(path, 0, format!("no covariate row for node `{id}`")));
        }
    }
    let n = ids.len();
    let mut out_cols: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for (c, name) in cols.iter().enumerate() {
        let raw: Vec<&str> = ids.iter().map(|id| rows[id][c].as_str()).collect();
        let parsed: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
        match parsed {
            Some(mut v) => {
                if standardize {
                    let mean = v.iter().sum::<f64>() / n as f64;
                    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
                    if sd > 0.0 {
                        v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
                    }
                }
                out_cols.push(v);
                names.push(name.clone());
                kinds.push(ColumnKind::Continuous);
            }
            None => {
                let levels: BTreeSet<&str> = raw.iter().copied().collect();
                for level in levels.iter().skip(1) {
                    out_cols.push(raw.iter().map(|s| if s == level { 1.0 } else { 0.0 }).collect());
                    names.push(format!("{name}={level}"));
                    kinds.push(ColumnKind::Categorical);
                }
            }
        }
    }
    let values = DMatrix::from_fn(n, out_cols.len(), |i, j| out_cols[j][i]);
    Ok(Covariates { values, names, kinds })
}
