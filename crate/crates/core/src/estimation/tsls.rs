//! Two-stage least squares starting values.
//!
//! `y` is regressed on `[X, Λ, Ay]` with `Ay` endogenous, instrumented by
//! `[X, Λ, AX, AΛ, A²X]`. Constant columns of `X` are left out of the lagged
//! blocks (their lags duplicate the intercept when no node is isolated), and
//! lagged columns that add no rank are skipped.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::latent::MatrixNormalApprox;
use crate::model::{Dataset, ParamVector};
use crate::net::RowNormalizedNetwork;

const RANK_TOL: f64 = 1e-8;
const SIGMA2_FLOOR: f64 = 1e-8;

/// Incrementally built orthonormal basis.
struct Basis {
    cols: Vec<DVector<f64>>,
}

impl Basis {
    fn new() -> Self {
        Self { cols: Vec::new() }
    }

    /// Adds `v` if it is not (numerically) in the current span.
    fn push(&mut self, v: &DVector<f64>) -> bool {
        let scale = v.norm();
        if scale == 0.0 {
            return false;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &self.cols {
                let c = q.dot(&w);
                w -= q * c;
            }
        }
        let r = w.norm();
        if r <= RANK_TOL * scale {
            return false;
        }
        self.cols.push(w / r);
        true
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for q in &self.cols {
            out += q * q.dot(v);
        }
        out
    }
}

fn is_constant(c: &DVector<f64>) -> bool {
    c.iter().all(|&v| v == c[0])
}

/// 2SLS estimate of `(β, γ, ρ, σ²)` with `ρ` clipped into `rho_bounds`.
///
/// A latent summary whose `Λ` is identically zero contributes no regressors;
/// `γ` then starts at zero.
pub fn init_2sls(
    data: &Dataset,
    network: &RowNormalizedNetwork,
    latent: Option<&MatrixNormalApprox>,
    rho_bounds: (f64, f64),
) -> Result<ParamVector> {
    let n = data.n();
    if network.n() != n {
        return Err(Error::BadShape(format!("dataset has {n} rows, network {} nodes", network.n())));
    }
    let a = network.matrix();
    let d = latent.map_or(0, |l| l.dim());
    let lambda = latent.filter(|l| l.lambda.amax() > 0.0).map(|l| l.lambda.clone());
    let exog: Vec<DVector<f64>> = data
        .x
        .column_iter()
        .map(|c| c.into_owned())
        .chain(lambda.iter().flat_map(|l| l.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>()))
        .collect();

    let mut basis = Basis::new();
    for (j, c) in exog.iter().enumerate() {
        if !basis.push(c) {
            return Err(Error::RankDeficientInstruments(format!(
                "regressor column {j} is collinear with earlier columns"
            )));
        }
    }
    let x_lagged: Vec<DVector<f64>> = data
        .x
        .column_iter()
        .map(|c| c.into_owned())
        .filter(|c| !is_constant(c))
        .collect();
    let mut extra = 0;
    let mut candidates: Vec<DVector<f64>> = x_lagged.iter().map(|c| a * c).collect();
    if let Some(l) = &lambda {
        candidates.extend(l.column_iter().map(|c| a * c));
    }
    candidates.extend(x_lagged.iter().map(|c| a * (a * c)));
    for c in &candidates {
        if basis.push(c) {
            extra += 1;
        }
    }
    if extra == 0 {
        return Err(Error::RankDeficientInstruments(
            "no lagged instrument adds rank beyond the exogenous regressors".into(),
        ));
    }

    let ay = a * &data.y;
    let ay_hat = basis.project(&ay);
    let k = exog.len() + 1;
    let mut w_hat = DMatrix::zeros(n, k);
    let mut w = DMatrix::zeros(n, k);
    for (j, c) in exog.iter().enumerate() {
        w_hat.set_column(j, c);
        w.set_column(j, c);
    }
    w_hat.set_column(k - 1, &ay_hat);
    w.set_column(k - 1, &ay);

    let svd = w_hat.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
        return Err(Error::SingularSecondStage);
    }
    let coef = svd.solve(&data.y, 1e-12 * smax).map_err(|_| Error::SingularSecondStage)?;
    let resid = &data.y - &w * &coef;
    let dof = if n > k { (n - k) as f64 } else { n as f64 };
    let sigma2 = (resid.norm_squared() / dof).max(SIGMA2_FLOOR);

    let p = data.p();
    let beta: Vec<f64> = coef.rows(0, p).iter().copied().collect();
    let gamma: Vec<f64> = if lambda.is_some() {
        coef.rows(p, d).iter().copied().collect()
    } else {
        vec![0.0; d]
    };
    let (lo, hi) = stable_bounds(network, rho_bounds);
    let rho = coef[k - 1].clamp(lo, hi);
    Ok(ParamVector { beta, gamma, rho, sigma2 })
}

/// `rho_bounds` intersected with the stability region `|ρ| ||A||₂ < 1`.
pub fn stable_bounds(network: &RowNormalizedNetwork, rho_bounds: (f64, f64)) -> (f64, f64) {
    let lim = network.stable_rho_limit(1e-6);
    (rho_bounds.0.max(-lim), rho_bounds.1.min(lim))
}
