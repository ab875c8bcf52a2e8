//! Two-step benchmark: model `P(Y > S | a, x)` with an L1-penalized logistic
//! regression, then read the interval off a dose grid.

use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::linalg::Matrix;
use crate::types::{Dataset, DoseBounds, IntervalPolicy, Side, ThresholdSpec};

pub const GRID_POINTS: usize = 200;
pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITERS: usize = 50_000;

/// Raw (unstandardized) features: `A, A^2, X_j, X_j^2, A X_j`.
pub fn raw_features(a: f64, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut f = Vec::with_capacity(2 + 3 * d);
    f.push(a);
    f.push(a * a);
    f.extend_from_slice(x);
    f.extend(x.iter().map(|v| v * v));
    f.extend(x.iter().map(|v| a * v));
    f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Indices of the raw features kept (non-constant on training data).
    pub keep: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    fn fit(raw: &Matrix) -> Self {
        let n = raw.nrows() as f64;
        let mut keep = Vec::new();
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for j in 0..raw.ncols() {
            let m = raw.rows_iter().map(|r| r[j]).sum::<f64>() / n;
            let v = raw.rows_iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            if v.sqrt() > 1e-12 {
                keep.push(j);
                mean.push(m);
                sd.push(v.sqrt());
            }
        }
        Self { keep, mean, sd }
    }

    fn apply(&self, raw: &[f64]) -> Vec<f64> {
        self.keep
            .iter()
            .enumerate()
            .map(|(k, &j)| (raw[j] - self.mean[k]) / self.sd[k])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndirectModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub standardizer: Standardizer,
    pub grid: Vec<f64>,
    pub alpha: f64,
    pub bounds: DoseBounds,
    pub threshold: ThresholdSpec,
    pub l1_penalty: f64,
    pub dim: usize,
    pub iterations: usize,
    pub converged: bool,
}

pub fn dose_grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID_POINTS)
        .map(|k| {
            if k == GRID_POINTS - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64
            }
        })
        .collect()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Mean logistic loss and its gradient; index 0 is the intercept.
struct Logistic<'a> {
    z: &'a Matrix,
    labels: &'a [f64],
}

impl Logistic<'_> {
    fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.z.nrows() as f64;
        self.z
            .rows_iter()
            .zip(self.labels)
            .map(|(r, y)| {
                let eta = theta[0] + r.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
                softplus(eta) - y * eta
            })
            .sum::<f64>()
            / n
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.z.nrows() as f64;
        let mut g = vec![0.0; theta.len()];
        for (r, y) in self.z.rows_iter().zip(self.labels) {
            let eta = theta[0] + r.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
            let e = sigmoid(eta) - y;
            g[0] += e;
            for (gj, zj) in g[1..].iter_mut().zip(r) {
                *gj += e * zj;
            }
        }
        g.iter_mut().for_each(|v| *v /= n);
        g
    }
}

fn penalty(theta: &[f64], l1: f64) -> f64 {
    l1 * theta[1..].iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the subgradient optimality conditions.
fn optimality_gap(grad: &[f64], theta: &[f64], l1: f64) -> f64 {
    let mut gap = grad[0].abs();
    for j in 1..theta.len() {
        let v = if theta[j] > 0.0 {
            (grad[j] + l1).abs()
        } else if theta[j] < 0.0 {
            (grad[j] - l1).abs()
        } else {
            (grad[j].abs() - l1).max(0.0)
        };
        gap = gap.max(v);
    }
    gap
}

struct L1Fit {
    theta: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Accelerated proximal gradient with backtracking and adaptive restart.
fn l1_logistic(z: &Matrix, labels: &[f64], l1: f64) -> L1Fit {
    let p = z.ncols() + 1;
    let prob = Logistic { z, labels };
    let mut theta = vec![0.0; p];
    let ybar = crate::linalg::mean(labels);
    theta[0] = (ybar / (1.0 - ybar)).ln();
    let mut momentum = theta.clone();
    let mut t_k = 1.0_f64;
    let mut step = 1.0_f64;
    let mut obj = prob.loss(&theta) + penalty(&theta, l1);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERS {
        let g_theta = prob.grad(&theta);
        if optimality_gap(&g_theta, &theta, l1) <= GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let g = prob.grad(&momentum);
        let f_m = prob.loss(&momentum);
        let next = loop {
            let cand: Vec<f64> = (0..p)
                .map(|j| {
                    let v = momentum[j] - step * g[j];
                    if j == 0 {
                        v
                    } else {
                        soft_threshold(v, step * l1)
                    }
                })
                .collect();
            let diff: Vec<f64> = cand.iter().zip(&momentum).map(|(c, m)| c - m).collect();
            let quad = f_m
                + diff.iter().zip(&g).map(|(d, gj)| d * gj).sum::<f64>()
                + diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
            if prob.loss(&cand) <= quad + 1e-15 || step < 1e-12 {
                break cand;
            }
            step *= 0.5;
        };
        let next_obj = prob.loss(&next) + penalty(&next, l1);
        if next_obj > obj {
            // restart momentum from the last iterate
            momentum = theta.clone();
            t_k = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
        let beta = (t_k - 1.0) / t_next;
        momentum = next
            .iter()
            .zip(&theta)
            .map(|(nx, th)| nx + beta * (nx - th))
            .collect();
        theta = next;
        obj = next_obj;
        t_k = t_next;
        step *= 1.1;
    }
    L1Fit {
        theta,
        iterations,
        converged,
    }
}

/// Fits the outcome classifier for `I(Y > S(x))` on dose/covariate features.
pub fn fit_indirect(
    data: &Dataset,
    threshold: &ThresholdSpec,
    alpha: f64,
    l1_penalty: f64,
) -> Result<IndirectModel> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PdiError::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(l1_penalty >= 0.0) {
        return Err(PdiError::InvalidConfig(format!(
            "l1 penalty must be non-negative, got {l1_penalty}"
        )));
    }
    let s = threshold.values(&data.x)?;
    let labels: Vec<f64> = data
        .y
        .iter()
        .zip(&s)
        .map(|(y, s)| if y > s { 1.0 } else { 0.0 })
        .collect();
    let n_pos = labels.iter().filter(|v| **v > 0.5).count();
    if n_pos == 0 || n_pos == data.n() {
        return Err(PdiError::SingleClass("indirect classifier needs both outcome classes"));
    }
    let n = data.n();
    let p_raw = 2 + 3 * data.d();
    let mut raw = Matrix::zeros(n, p_raw);
    for i in 0..n {
        raw.row_mut(i)
            .copy_from_slice(&raw_features(data.a[i], data.x.row(i)));
    }
    let standardizer = Standardizer::fit(&raw);
    let p = standardizer.keep.len();
    let mut z = Matrix::zeros(n, p);
    for i in 0..n {
        z.row_mut(i).copy_from_slice(&standardizer.apply(raw.row(i)));
    }
    let fit = l1_logistic(&z, &labels, l1_penalty);
    if !fit.converged {
        log::warn!(
            "l1 logistic stopped after {} iterations without reaching tolerance",
            fit.iterations
        );
    }
    Ok(IndirectModel {
        intercept: fit.theta[0],
        coef: fit.theta[1..].to_vec(),
        standardizer,
        grid: dose_grid(data.bounds.lo, data.bounds.hi),
        alpha,
        bounds: data.bounds,
        threshold: threshold.clone(),
        l1_penalty,
        dim: data.d(),
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

impl IndirectModel {
    /// `h(a, x) = P^(Y > S | a, x)`.
    pub fn prob(&self, a: f64, x: &[f64]) -> f64 {
        let z = self.standardizer.apply(&raw_features(a, x));
        sigmoid(self.intercept + z.iter().zip(&self.coef).map(|(u, v)| u * v).sum::<f64>())
    }

    /// Penalized training objective at the fitted coefficients.
    pub fn objective(&self, data: &Dataset) -> Result<f64> {
        let s = self.threshold.values(&data.x)?;
        let n = data.n() as f64;
        let mut loss = 0.0;
        for i in 0..data.n() {
            let y = if data.y[i] > s[i] { 1.0 } else { 0.0 };
            let z = self.standardizer.apply(&raw_features(data.a[i], data.x.row(i)));
            let eta = self.intercept + z.iter().zip(&self.coef).map(|(u, v)| u * v).sum::<f64>();
            loss += softplus(eta) - y * eta;
        }
        Ok(loss / n + self.l1_penalty * self.coef.iter().map(|v| v.abs()).sum::<f64>())
    }

    /// Same model with the dose grid rebuilt on `[lo, hi]`.
    pub fn with_grid_range(&self, lo: f64, hi: f64) -> Self {
        Self {
            grid: dose_grid(lo, hi),
            ..self.clone()
        }
    }

    pub fn extract_lower_bound(&self, x: &[f64]) -> f64 {
        extract_lower_bound_by(&self.grid, self.alpha, |a| self.prob(a, x))
    }
}

/// Smallest grid point from which every higher grid point has `h > alpha`;
/// the top of the grid when even that fails.
pub fn extract_lower_bound_by(grid: &[f64], alpha: f64, h: impl Fn(f64) -> f64) -> f64 {
    let mut lower = None;
    for &a in grid.iter().rev() {
        if h(a) > alpha {
            lower = Some(a);
        } else {
            break;
        }
    }
    lower.unwrap_or(*grid.last().expect("non-empty grid"))
}

pub fn extract_lower_bound(model: &IndirectModel, x: &[f64]) -> f64 {
    model.extract_lower_bound(x)
}

impl IntervalPolicy for IndirectModel {
    fn side(&self) -> Side {
        Side::LowerOneSided
    }

    fn dose_bounds(&self) -> DoseBounds {
        self.bounds
    }

    fn interval(&self, x: &[f64]) -> (f64, f64) {
        (self.bounds.clip(self.extract_lower_bound(x)), self.bounds.hi)
    }
}
