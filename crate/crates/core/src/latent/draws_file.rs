//! Text format for latent draws: a header line `n,D,K` followed by `K`
//! blocks of `n` rows with `D` comma-separated values each. Lines starting
//! with `#` before the header are comments and are kept on the draws.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::LatentDraws;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub fn format_draws(draws: &LatentDraws) -> String {
    let mut out = String::new();
    for c in draws.comments() {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "{},{},{}", draws.n(), draws.dim(), draws.len());
    for u in draws.draws() {
        for i in 0..u.nrows() {
            let row: Vec<String> = (0..u.ncols()).map(|j| format!("{}", u[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
    }
    out
}

pub fn parse_draws(text: &str, source: &str) -> Result<LatentDraws> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let mut comments = Vec::new();
    while let Some((_, c)) = lines.next_if(|(_, l)| l.starts_with('#')) {
        let c = c.strip_prefix('#').unwrap_or(c);
        comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
    }
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{source}: empty draws file")))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidInput(format!("{source}:1: header must be `n,D,K`, got `{header}`")))?;
    if dims.len() != 3 {
        return Err(Error::InvalidInput(format!("{source}:1: header must be `n,D,K`, got `{header}`")));
    }
    let (n, d, k) = (dims[0], dims[1], dims[2]);
    let mut draws = Vec::with_capacity(k);
    for b in 0..k {
        let mut m = DMatrix::zeros(n, d);
        for i in 0..n {
            let (lineno, line) = lines.next().ok_or_else(|| {
                Error::BadShape(format!(
                    "{source}: expected {k} blocks of {n} rows x {d} values, file ended in block {} at row {}",
                    b + 1,
                    i + 1
                ))
            })?;
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != d {
                return Err(Error::BadShape(format!(
                    "{source}:{}: expected {d} values, found {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            for (j, v) in vals.iter().enumerate() {
                m[(i, j)] = v.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("{source}:{}: `{}` is not a number", lineno + 1, v.trim()))
                })?;
            }
        }
        draws.push(m);
    }
    if let Some((lineno, _)) = lines.next() {
        return Err(Error::BadShape(format!(
            "{source}:{}: extra rows after {k} blocks of {n} x {d}",
            lineno + 1
        )));
    }
    LatentDraws::new(draws)
        .map(|d| d.with_comments(comments))
        .map_err(|e| Error::InvalidInput(format!("{source}: {e}")))
}

pub fn read_draws(path: &Path) -> Result<LatentDraws> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    parse_draws(&text, &path.display().to_string())
}

pub fn write_draws(path: &Path, draws: &LatentDraws) -> Result<()> {
    write_atomic(path, format_draws(draws).as_bytes())
}
