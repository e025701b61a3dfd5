//! Network representation and the spectral stability check.
//!
//! Raw adjacencies may be weighted; row normalization divides every nonzero
//! row by its sum and leaves all-zero rows (isolates) at zero, so isolates
//! receive no influence and `I - rho A` stays invertible whenever
//! `|rho| * ||A||_2 < 1`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Spectrum;

const POWER_MAX_ITERS: usize = 10_000;
const POWER_TOL: f64 = 1e-12;

/// Directed, possibly weighted adjacency with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    entries: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl Adjacency {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n != entries.ncols() {
            return Err(Error::BadShape(format!(
                "adjacency must be square, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::BadShape(format!("need at least 2 nodes, got {n}")));
        }
        for j in 0..n {
            for i in 0..n {
                let v = entries[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("adjacency entry ({i}, {j})")));
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry { row: i, col: j, value: v });
                }
            }
        }
        for i in 0..n {
            if entries[(i, i)] != 0.0 {
                return Err(Error::NonzeroDiagonal { index: i, value: entries[(i, i)] });
            }
        }
        Ok(Self { entries, labels: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::BadShape("adjacency rows must all have length n".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::BadShape(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn edge_count(&self) -> usize {
        self.entries.iter().filter(|&&v| v > 0.0).count()
    }

    /// 0/1 view of the adjacency (`1` wherever the weight is positive).
    pub fn binary(&self) -> DMatrix<f64> {
        self.entries.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }
}

/// Row-normalized network `A` together with the raw adjacency it came from.
#[derive(Debug, Clone)]
pub struct RowNormalizedNetwork {
    a: DMatrix<f64>,
    isolated: Vec<usize>,
    raw: Adjacency,
    norm: OnceLock<std::result::Result<f64, usize>>,
    spectrum: OnceLock<Spectrum>,
}

impl PartialEq for RowNormalizedNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a && self.isolated == other.isolated
    }
}

/// Divides each nonzero row by its sum; zero rows stay zero and are recorded
/// as isolated.
pub fn row_normalize(raw: &Adjacency) -> RowNormalizedNetwork {
    let n = raw.n();
    let mut a = raw.entries.clone();
    let mut isolated = Vec::new();
    for i in 0..n {
        let s: f64 = a.row(i).sum();
        if s == 0.0 {
            isolated.push(i);
        } else {
            for j in 0..n {
                a[(i, j)] /= s;
            }
        }
    }
    RowNormalizedNetwork {
        a,
        isolated,
        raw: raw.clone(),
        norm: OnceLock::new(),
        spectrum: OnceLock::new(),
    }
}

impl RowNormalizedNetwork {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn isolated(&self) -> &[usize] {
        &self.isolated
    }

    pub fn raw(&self) -> &Adjacency {
        &self.raw
    }

    /// The normalized matrix viewed as an adjacency (for re-normalizing).
    pub fn to_adjacency(&self) -> Adjacency {
        Adjacency { entries: self.a.clone(), labels: self.raw.labels.clone() }
    }

    /// Largest singular value, cached after the first call.
    pub fn spectral_norm(&self) -> Result<f64> {
        self.norm
            .get_or_init(|| spectral_norm_of(&self.a).map_err(|_| POWER_MAX_ITERS))
            .map_err(|iterations| Error::NoConvergence { iterations })
    }

    /// Eigenvalues used for `log det(I - rho A)` and `Tr(A(I - rho A)⁻¹)`.
    pub(crate) fn spectrum(&self) -> &Spectrum {
        self.spectrum.get_or_init(|| {
            let probe = (0.9 * self.stable_rho_limit(0.0)).min(0.9);
            Spectrum::new(&self.a, probe)
        })
    }

    /// `|rho| * ||A||_2 < 1`.
    pub fn check_stability(&self, rho: f64) -> bool {
        check_stability(rho, self)
    }

    /// Largest `|rho|` that passes the stability check, shrunk by a relative margin.
    pub fn stable_rho_limit(&self, margin: f64) -> f64 {
        match self.spectral_norm() {
            Ok(s) if s > 0.0 => (1.0 - margin) / s,
            _ => f64::INFINITY,
        }
    }
}

/// Largest singular value of `A` by power iteration on `AᵀA`.
pub fn spectral_norm(network: &RowNormalizedNetwork) -> Result<f64> {
    network.spectral_norm()
}

pub fn check_stability(rho: f64, network: &RowNormalizedNetwork) -> bool {
    if rho == 0.0 {
        return true;
    }
    match network.spectral_norm() {
        Ok(s) => s == 0.0 || rho.abs() * s < 1.0,
        Err(_) => false,
    }
}

pub(crate) fn spectral_norm_of(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.ncols();
    if a.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let ata = a.transpose() * a;
    // start away from any coordinate subspace
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i % 7) as f64 / 7.0);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = &ata * &v;
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            // v landed in the null space; restart from a different direction
            v = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -0.5 });
            v /= v.norm();
            continue;
        }
        let resid = (&w - &v * next).norm();
        let settled = (next - lambda).abs() <= POWER_TOL * next && resid <= 1e-6 * next;
        lambda = next;
        v = w / wn;
        if settled {
            return Ok(lambda.sqrt());
        }
    }
    Err(Error::NoConvergence { iterations: POWER_MAX_ITERS })
}
