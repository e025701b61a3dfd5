use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Adjacency;

/// Latent-distance network generator settings.
///
/// Positions come from a Gaussian mixture: cluster means are drawn
/// `N(0, cluster_spread² I)` unless given, nodes are assigned to clusters
/// uniformly and scattered `N(mean, cluster_scale² I)` around them. Directed
/// edges are independent with `logit P(A_ij = 1) = θ₀ - ||u_i - u_j|| + θ_x |x_i - x_j|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub n: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub cluster_spread: f64,
    pub cluster_scale: f64,
    pub cluster_means: Option<Vec<Vec<f64>>>,
    /// Expected out-degree used to calibrate θ₀ when `edge_intercept` is unset.
    pub target_degree: f64,
    pub edge_intercept: Option<f64>,
    pub theta_x: f64,
    pub x_mean: f64,
    pub x_sd: f64,
}

impl Default for NetParams {
    fn default() -> Self {
        Self {
            n: 150,
            dim: 3,
            n_clusters: 6,
            cluster_spread: 3.0,
            cluster_scale: 1.0,
            cluster_means: None,
            target_degree: 5.0,
            edge_intercept: None,
            theta_x: 0.5,
            x_mean: 2.0,
            x_sd: 1.0,
        }
    }
}

impl NetParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.dim == 0 || self.n_clusters == 0 {
            return Err(Error::InvalidInput("network needs n >= 2, dim >= 1 and at least one cluster".into()));
        }
        let nonneg = [self.cluster_spread, self.cluster_scale, self.x_sd];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || !self.x_mean.is_finite() || !self.theta_x.is_finite() {
            return Err(Error::InvalidInput("network scales must be finite and non-negative".into()));
        }
        if self.edge_intercept.is_none() && !(self.target_degree > 0.0 && self.target_degree < (self.n - 1) as f64) {
            return Err(Error::InvalidInput(format!(
                "target degree must lie in (0, {}), got {}",
                self.n - 1,
                self.target_degree
            )));
        }
        if let Some(t) = self.edge_intercept {
            if t.is_nan() {
                return Err(Error::InvalidInput("edge intercept is NaN".into()));
            }
        }
        if let Some(means) = &self.cluster_means {
            if means.is_empty() || means.iter().any(|m| m.len() != self.dim || m.iter().any(|v| !v.is_finite())) {
                return Err(Error::InvalidInput(format!("cluster means must be finite {}-vectors", self.dim)));
            }
        }
        Ok(())
    }
}

/// A generated network with its covariates and true latent positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimNetwork {
    pub adjacency: Adjacency,
    /// Design matrix `[1, x]`.
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub cluster: Vec<usize>,
    pub edge_intercept: f64,
}

impl SimNetwork {
    pub fn column_names() -> Vec<String> {
        vec!["(intercept)".into(), "x".into()]
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean out-degree implied by intercept `t` given the dyadic offsets.
fn expected_degree(offsets: &DMatrix<f64>, t: f64) -> f64 {
    let n = offsets.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += sigmoid(t + offsets[(i, j)]);
            }
        }
    }
    s / n as f64
}

fn calibrate_intercept(offsets: &DMatrix<f64>, target: f64) -> f64 {
    let (mut lo, mut hi) = (-200.0, 200.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_degree(offsets, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate_network(params: &NetParams, seed: u64) -> Result<SimNetwork> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (params.n, params.dim);
    let means: Vec<Vec<f64>> = match &params.cluster_means {
        Some(m) => m.clone(),
        None => (0..params.n_clusters)
            .map(|_| (0..d).map(|_| params.cluster_spread * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect(),
    };
    let cluster: Vec<usize> = (0..n).map(|_| rng.gen_range(0..means.len())).collect();
    let u = DMatrix::from_fn(n, d, |i, k| means[cluster[i]][k]);
    let mut u = u;
    for v in u.iter_mut() {
        *v += params.cluster_scale * rng.sample::<f64, _>(StandardNormal);
    }
    let xs: Vec<f64> = (0..n).map(|_| params.x_mean + params.x_sd * rng.sample::<f64, _>(StandardNormal)).collect();

    let offsets = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let dist = (u.row(i) - u.row(j)).norm();
        -dist + params.theta_x * (xs[i] - xs[j]).abs()
    });
    let t0 = match params.edge_intercept {
        Some(t) => t,
        None => calibrate_intercept(&offsets, params.target_degree),
    };
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < sigmoid(t0 + offsets[(i, j)]) {
                a[(i, j)] = 1.0;
            }
        }
    }
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyNetwork);
    }
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    Ok(SimNetwork { adjacency: Adjacency::new(a)?, x, u, cluster, edge_intercept: t0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn very_negative_intercept_gives_empty_network() {
        let p = NetParams { n: 20, edge_intercept: Some(-1e6), ..Default::default() };
        assert_eq!(generate_network(&p, 1).unwrap_err(), Error::EmptyNetwork);
    }

    #[test]
    fn calibration_hits_target_degree() {
        let p = NetParams { n: 60, ..Default::default() };
        let mean: f64 = (0..50)
            .map(|s| {
                let net = generate_network(&p, s).unwrap();
                net.adjacency.edge_count() as f64 / p.n as f64
            })
            .sum::<f64>()
            / 50.0;
        assert!((mean - 5.0).abs() < 1.0, "mean degree {mean}");
    }

    #[test]
    fn same_seed_same_network() {
        let p = NetParams { n: 30, ..Default::default() };
        assert_eq!(generate_network(&p, 4).unwrap(), generate_network(&p, 4).unwrap());
    }
}
