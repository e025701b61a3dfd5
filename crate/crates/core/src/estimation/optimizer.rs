//! Limited-memory quasi-Newton minimizer with box constraints.
//!
//! Directions come from the two-loop recursion restricted to the free
//! variables (coordinates not pinned at a bound by the gradient); steps are
//! projected back into the box and accepted by an Armijo backtracking test
//! along the projected path (or, once the decrease is below rounding noise,
//! by an approximate Wolfe test on the slope). Iteration stops when the projected gradient
//! `P(x - g) - x` falls below `grad_tol` in the max norm.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Relative objective change treated as rounding noise by the line search.
pub const F_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub history: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iters: 500, grad_tol: 1e-6, history: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub projected_grad_norm: f64,
    /// Objective at every accepted iterate, starting point included.
    pub f_history: Vec<f64>,
}

pub fn projected_gradient(x: &DVector<f64>, g: &DVector<f64>, bounds: &Bounds) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| (x[i] - g[i]).clamp(bounds.lower[i], bounds.upper[i]) - x[i])
}

/// Minimizes `f`, which returns the objective and its gradient. Errors from
/// `f` at trial points are treated as an infinite objective; an error at the
/// starting point is returned.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, bounds: &Bounds, opts: &LbfgsOptions) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    if bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::BadShape("bounds do not match the parameter dimension".into()));
    }
    let mut x = x0;
    bounds.project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut f_history = vec![fx];
    let mut iterations = 0;
    let mut pg_norm = projected_gradient(&x, &g, bounds).amax();

    while iterations < opts.max_iters {
        if pg_norm < opts.grad_tol {
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &DVector<f64>| DVector::from_fn(n, |i, _| if free[i] { v[i] } else { 0.0 });

        let gq = mask(&g);
        let mut d = -two_loop(&gq, &history, &mask);
        if d.dot(&g) >= -1e-12 * d.norm() * gq.norm() {
            history.clear();
            d = -gq.clone();
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let mut alpha = if history.is_empty() { (1.0 / d.amax().max(1e-300)).min(1.0) } else { 1.0 };
            for _ in 0..60 {
                let mut trial = &x + &d * alpha;
                bounds.project(&mut trial);
                let step = &trial - &x;
                let decrease = g.dot(&step);
                if step.amax() == 0.0 {
                    break;
                }
                if let Ok((ft, gt)) = f(&trial) {
                    if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
                        let armijo = ft <= fx + 1e-4 * decrease;
                        // near the optimum the decrease drops below the rounding
                        // error of f; fall back on the slope at the trial point
                        let approx = ft <= fx + F_NOISE * (1.0 + fx.abs()) && gt.dot(&step) <= (2e-4 - 1.0) * decrease;
                        if armijo || approx {
                            accepted = Some((trial, ft, gt));
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || attempt == 1 || history.is_empty() {
                break;
            }
            // quasi-Newton direction failed; retry along steepest descent
            history.clear();
            d = -gq.clone();
        }

        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 * y.norm_squared() {
            if history.len() == opts.history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fnew;
        g = gnew;
        f_history.push(fx);
        pg_norm = projected_gradient(&x, &g, bounds).amax();
    }

    Ok(Minimum {
        converged: pg_norm < opts.grad_tol,
        projected_grad_norm: pg_norm,
        x,
        f: fx,
        grad: g,
        iterations,
        f_history,
    })
}

fn two_loop<M>(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>, mask: &M) -> DVector<f64>
where
    M: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let s = mask(s);
        let a = rho * s.dot(&q);
        q -= mask(y) * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let (s, y) = (mask(s), mask(y));
        let yy = y.norm_squared();
        if yy > 0.0 {
            q *= s.dot(&y).max(0.0) / yy;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * mask(y).dot(&q);
        q += mask(s) * (a - b);
    }
    mask(&q)
}
