//! Difference-of-convex fitting of kernel bound functions.
//!
//! The truncated hinge splits into two convex hinges. Each iteration
//! linearizes the concave part at the current bound, which leaves a convex
//! problem whose dual is a box-and-sum-to-zero QP ([`crate::qp`]). The QP
//! gives the kernel coefficients (`v = -beta`); the intercept is then set by
//! an exact one-dimensional search over the breakpoints of the piecewise
//! linear objective.

use log::warn;

use crate::error::{PdiError, Result};
use crate::kernel::gram;
use crate::linalg::{least_squares, quantile, Matrix};
use crate::loss::{fitted_values, lower_row_loss, quadratic_penalty};
use crate::qp::{solve_qp_from, QpProblem};
use crate::types::{
    BoundFunction, Dataset, DoseBounds, IntervalPolicyModel, Side, SurrogateConfig, ThresholdSpec,
};

const INIT_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
const MAX_HALVINGS: usize = 20;
/// KKT tolerance of each DC subproblem, in dose units.
pub const SUBPROBLEM_TOL: f64 = 1e-3;
/// Pair-update budget per coordinate for each DC subproblem. Low-rank Gram
/// matrices with tiny `lambda` converge slowly; a capped solve still yields
/// a descent step, which the acceptance test below enforces.
pub const SUBPROBLEM_MAX_SWEEPS: usize = 50;

/// Sweeps per fit after which a truncated subproblem is treated as solved.
pub const FIT_SWEEP_BUDGET: usize = 1000;

/// Per-row dual weights `H_i = (1-alpha) I(Y>S) w / lambda` and
/// `H~_i = alpha I(Y<=S) w / lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedLabels {
    pub h: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

impl WeightedLabels {
    pub fn new(favourable: &[bool], w: &[f64], alpha: f64, lambda: f64) -> Self {
        let (h, h_tilde) = favourable
            .iter()
            .zip(w)
            .map(|(&pos, &wi)| {
                if pos {
                    ((1.0 - alpha) * wi / lambda, 0.0)
                } else {
                    (0.0, alpha * wi / lambda)
                }
            })
            .unzip();
        Self { h, h_tilde }
    }
}

/// Which side of the ramp each row sits on at the current bound:
/// `q` is `f_i - A_i > eps`, `q_tilde` is `A_i - f_i > eps`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linearization {
    pub q: Vec<bool>,
    pub q_tilde: Vec<bool>,
}

impl Linearization {
    pub fn at(f: &[f64], a: &[f64], eps: f64) -> Self {
        let (q, q_tilde) = f
            .iter()
            .zip(a)
            .map(|(fi, ai)| (fi - ai > eps, ai - fi > eps))
            .unzip();
        Self { q, q_tilde }
    }
}

/// Box of the dual subproblem:
/// `[c_i - H~_i/eps, c_i + H_i/eps]` with `c_i = H~_i Q~_i - H_i Q_i`.
pub fn dual_box(labels: &WeightedLabels, lin: &Linearization, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let inv = 1.0 / eps;
    (0..labels.h.len())
        .map(|i| {
            let qi = if lin.q[i] { inv } else { 0.0 };
            let qti = if lin.q_tilde[i] { inv } else { 0.0 };
            let c = labels.h_tilde[i] * qti - labels.h[i] * qi;
            (c - labels.h_tilde[i] * inv, c + labels.h[i] * inv)
        })
        .unzip()
}

/// Per-iteration record of a fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DcTrace {
    /// Primal objective at the initial point and after every accepted step.
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of steps that needed halving.
    pub halvings: usize,
    /// Pair updates spent in the dual subproblems.
    pub qp_updates: usize,
    /// True when the data carried a single outcome class.
    pub degenerate: bool,
}

/// Starting point of a fit.
#[derive(Clone, Debug, PartialEq)]
pub enum DcStart {
    /// `v = 0`; intercept from the best initial dose quantile.
    Quantiles,
    /// `v = 0`; the given intercept.
    Constant(f64),
    /// Full warm start.
    Warm { coef: Vec<f64>, intercept: f64 },
}

/// Everything needed to evaluate the lower-bound objective on one dataset.
struct Problem<'a> {
    a: &'a [f64],
    w: &'a [f64],
    favourable: Vec<bool>,
    alpha: f64,
    eps: f64,
    lambda: f64,
    k: Matrix,
}

impl Problem<'_> {
    fn loss_at(&self, f: &[f64]) -> f64 {
        (0..self.a.len())
            .map(|i| lower_row_loss(self.alpha, self.eps, self.w[i], self.favourable[i], self.a[i], f[i]))
            .sum()
    }

    fn loss_shifted(&self, f_tilde: &[f64], t: f64) -> f64 {
        (0..self.a.len())
            .map(|i| {
                lower_row_loss(
                    self.alpha,
                    self.eps,
                    self.w[i],
                    self.favourable[i],
                    self.a[i],
                    f_tilde[i] + t,
                )
            })
            .sum()
    }

    fn objective(&self, coef: &[f64], intercept: f64) -> f64 {
        let f = fitted_values(&self.k, coef, intercept);
        self.loss_at(&f) + quadratic_penalty(self.lambda, coef, &self.k)
    }

    /// Exact minimizer over `t` of the loss at `f_tilde + t`.
    ///
    /// The loss is piecewise linear in `t` with kinks at `A_i - f~_i` and
    /// `A_i - f~_i +- eps`, constant beyond the outermost kinks, so a sweep
    /// over the sorted kinks finds the global minimum. Returns `current`
    /// unless some kink is strictly better.
    fn line_search(&self, f_tilde: &[f64], current: f64) -> f64 {
        let n = self.a.len();
        let slope = 1.0 / self.eps;
        // (location, slope change)
        let mut events: Vec<(f64, f64)> = Vec::with_capacity(3 * n);
        for i in 0..n {
            let u = self.a[i] - f_tilde[i];
            if self.favourable[i] {
                let c = (1.0 - self.alpha) * self.w[i] * slope;
                events.push((u, c));
                events.push((u + self.eps, -c));
            } else {
                let c = self.alpha * self.w[i] * slope;
                events.push((u - self.eps, -c));
                events.push((u, c));
            }
        }
        events.sort_by(|x, y| x.0.total_cmp(&y.0));

        let mut prev_t = events[0].0;
        let mut value = self.loss_shifted(f_tilde, prev_t);
        let (mut best_t, mut best_v) = (prev_t, value);
        let mut s = 0.0;
        let mut idx = 0;
        while idx < events.len() {
            let t = events[idx].0;
            value += s * (t - prev_t);
            prev_t = t;
            while idx < events.len() && events[idx].0 == t {
                s += events[idx].1;
                idx += 1;
            }
            if value < best_v {
                best_v = value;
                best_t = t;
            }
        }
        // accumulated sweep values drift; confirm against exact evaluation
        let exact_best = self.loss_shifted(f_tilde, best_t);
        let exact_cur = self.loss_shifted(f_tilde, current);
        if exact_best < exact_cur {
            best_t
        } else {
            current
        }
    }
}

/// Fitted lower bound at the training rows plus its trace.
struct RawFit {
    bound: BoundFunction,
    trace: DcTrace,
}

fn favourable_labels(data: &Dataset, thresholds: &[f64]) -> Vec<bool> {
    data.y.iter().zip(thresholds).map(|(y, s)| y > s).collect()
}

fn fit_lower_raw(
    data: &Dataset,
    config: &SurrogateConfig,
    thresholds: &[f64],
    start: DcStart,
) -> Result<RawFit> {
    config.validate(data.bounds)?;
    let w = data.weights()?;
    let n = data.n();
    if thresholds.len() != n {
        return Err(PdiError::DimensionMismatch {
            what: "threshold values",
            expected: n,
            found: thresholds.len(),
        });
    }
    let favourable = favourable_labels(data, thresholds);
    let n_pos = favourable.iter().filter(|p| **p).count();
    if n_pos == 0 || n_pos == n {
        let value = if n_pos == n { data.bounds.lo } else { data.bounds.hi };
        warn!(
            "all {n} outcomes on one side of the threshold; returning constant bound {value}"
        );
        return Ok(RawFit {
            bound: BoundFunction::constant(config.kernel, data.x.clone(), value),
            trace: DcTrace {
                converged: true,
                degenerate: true,
                ..DcTrace::default()
            },
        });
    }

    let k = gram(&config.kernel, &data.x, None)?;
    let prob = Problem {
        a: &data.a,
        w,
        favourable,
        alpha: config.alpha,
        eps: config.epsilon,
        lambda: config.lambda,
        k,
    };
    let labels = WeightedLabels::new(&prob.favourable, w, config.alpha, config.lambda);

    let (mut coef, mut intercept) = match start {
        DcStart::Quantiles => {
            let mut best = (f64::INFINITY, 0.0);
            for q in INIT_QUANTILES {
                let v0 = quantile(&data.a, q);
                let obj = prob.loss_at(&vec![v0; n]);
                if obj < best.0 {
                    best = (obj, v0);
                }
            }
            (vec![0.0; n], best.1)
        }
        DcStart::Constant(v0) => (vec![0.0; n], v0),
        DcStart::Warm { coef, intercept } => {
            if coef.len() != n {
                return Err(PdiError::DimensionMismatch {
                    what: "warm-start coefficients",
                    expected: n,
                    found: coef.len(),
                });
            }
            (coef, intercept)
        }
    };

    let mut obj = prob.objective(&coef, intercept);
    let mut trace = DcTrace {
        objectives: vec![obj],
        ..DcTrace::default()
    };
    let mut f_tilde = fitted_values(&prob.k, &coef, 0.0);
    let mut previous: Option<Linearization> = None;
    let mut settled = false;
    let mut resume: Option<Vec<f64>> = None;

    for _ in 0..config.max_dc_iters {
        let f: Vec<f64> = f_tilde.iter().map(|v| v + intercept).collect();
        let lin = Linearization::at(&f, prob.a, prob.eps);
        if settled && previous.as_ref() == Some(&lin) {
            trace.converged = true;
            break;
        }
        let (lo, hi) = dual_box(&labels, &lin, prob.eps);
        let qp = QpProblem {
            k: &prob.k,
            q: prob.a.to_vec(),
            lo,
            hi,
        };
        // warm start at the dual point of the current iterate
        let start: Vec<f64> = resume
            .take()
            .unwrap_or_else(|| coef.iter().map(|c| -c).collect());
        let sol = solve_qp_from(&qp, &start, SUBPROBLEM_TOL, SUBPROBLEM_MAX_SWEEPS)?;
        settled = sol.converged || trace.qp_updates + sol.iterations >= FIT_SWEEP_BUDGET * n;
        trace.qp_updates += sol.iterations;
        if !sol.converged {
            log::debug!(
                "dc subproblem stopped at kkt residual {:.3e} after {} updates",
                sol.kkt_residual, sol.iterations
            );
        }
        trace.iterations += 1;

        let cand_coef: Vec<f64> = sol.beta.iter().map(|b| -b).collect();
        let cand_f = fitted_values(&prob.k, &cand_coef, 0.0);
        let cand_b = prob.line_search(&cand_f, intercept);
        let cand_obj = prob.objective(&cand_coef, cand_b);

        let accepted = if cand_obj <= obj {
            Some((cand_coef, cand_f, cand_b, cand_obj))
        } else {
            trace.halvings += 1;
            let mut found = None;
            let mut step = 1.0;
            for _ in 0..MAX_HALVINGS {
                step *= 0.5;
                let c: Vec<f64> = coef
                    .iter()
                    .zip(&cand_coef)
                    .map(|(o, nw)| o + step * (nw - o))
                    .collect();
                let ft = fitted_values(&prob.k, &c, 0.0);
                let b = prob.line_search(&ft, intercept);
                let o = prob.objective(&c, b);
                if o <= obj {
                    found = Some((c, ft, b, o));
                    break;
                }
            }
            found
        };

        let Some((c, ft, b, o)) = accepted else {
            if !settled {
                resume = Some(sol.beta);
                continue;
            }
            // no descent direction found along the DC step
            trace.converged = true;
            break;
        };
        let decrease = obj - o;
        coef = c;
        f_tilde = ft;
        intercept = b;
        obj = o;
        trace.objectives.push(obj);
        previous = Some(lin);
        // a truncated subproblem resumes from here on the next pass
        if settled && decrease < config.descent_tolerance * obj.abs().max(1.0) {
            trace.converged = true;
            break;
        }
    }

    Ok(RawFit {
        bound: BoundFunction {
            kernel: config.kernel,
            coef,
            intercept,
            support: data.x.clone(),
        },
        trace,
    })
}

/// Regularized objective of a one-sided bound evaluated at the training rows.
pub fn training_objective(
    data: &Dataset,
    config: &SurrogateConfig,
    thresholds: &[f64],
    coef: &[f64],
    intercept: f64,
) -> Result<f64> {
    let k = gram(&config.kernel, &data.x, None)?;
    let t = crate::loss::primal_objective(
        data,
        coef,
        intercept,
        &k,
        config,
        thresholds,
        Side::LowerOneSided,
    )?;
    Ok(t.objective)
}

/// Lower one-sided bound `[f_L(x), a_U]`.
pub fn fit_lower(
    data: &Dataset,
    config: &SurrogateConfig,
    threshold: &ThresholdSpec,
    init: Option<f64>,
) -> Result<IntervalPolicyModel> {
    Ok(fit_lower_traced(data, config, threshold, init)?.0)
}

pub fn fit_lower_traced(
    data: &Dataset,
    config: &SurrogateConfig,
    threshold: &ThresholdSpec,
    init: Option<f64>,
) -> Result<(IntervalPolicyModel, DcTrace)> {
    let start = init.map_or(DcStart::Quantiles, DcStart::Constant);
    fit_lower_with(data, config, threshold, start)
}

pub fn fit_lower_with(
    data: &Dataset,
    config: &SurrogateConfig,
    threshold: &ThresholdSpec,
    start: DcStart,
) -> Result<(IntervalPolicyModel, DcTrace)> {
    let s = threshold.values(&data.x)?;
    let raw = fit_lower_raw(data, config, &s, start)?;
    Ok((
        IntervalPolicyModel {
            side: Side::LowerOneSided,
            lower: Some(raw.bound),
            upper: None,
            bounds: data.bounds,
            alpha: config.alpha,
            threshold: threshold.clone(),
        },
        raw.trace,
    ))
}

/// Upper one-sided bound `[a_L, f_U(x)]`, fitted as a lower bound on `-A`.
pub fn fit_upper(
    data: &Dataset,
    config: &SurrogateConfig,
    threshold: &ThresholdSpec,
    init: Option<f64>,
) -> Result<IntervalPolicyModel> {
    Ok(fit_upper_traced(data, config, threshold, init)?.0)
}

pub fn fit_upper_traced(
    data: &Dataset,
    config: &SurrogateConfig,
    threshold: &ThresholdSpec,
    init: Option<f64>,
) -> Result<(IntervalPolicyModel, DcTrace)> {
    let neg = data.negate_doses();
    let (m, trace) = fit_lower_traced(&neg, config, threshold, init.map(|v| -v))?;
    let lower = m.lower.expect("lower fit yields a lower bound");
    Ok((
        IntervalPolicyModel {
            side: Side::UpperOneSided,
            lower: None,
            upper: Some(lower.negated()),
            bounds: data.bounds,
            alpha: config.alpha,
            threshold: threshold.clone(),
        },
        trace,
    ))
}

/// Two-sided interval: the lower bound is learned from rows dosed at or below
/// their midpoint, the upper bound from rows dosed above it.
pub fn fit_two_sided(
    data: &Dataset,
    config: &SurrogateConfig,
    threshold: &ThresholdSpec,
    midpoint: &[f64],
) -> Result<IntervalPolicyModel> {
    let n = data.n();
    if midpoint.len() != n {
        return Err(PdiError::DimensionMismatch {
            what: "midpoints",
            expected: n,
            found: midpoint.len(),
        });
    }
    let (below, above): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| data.a[i] <= midpoint[i]);
    if below.is_empty() {
        return Err(PdiError::EmptySplit("no rows at or below the midpoint"));
    }
    if above.is_empty() {
        return Err(PdiError::EmptySplit("no rows above the midpoint"));
    }
    if let Some(&m) = midpoint
        .iter()
        .find(|&&m| !(m > data.bounds.lo && m < data.bounds.hi))
    {
        return Err(PdiError::OutOfSupport {
            value: m,
            lo: data.bounds.lo,
            hi: data.bounds.hi,
        });
    }
    let m_max = midpoint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m_min = midpoint.iter().copied().fold(f64::INFINITY, f64::min);

    let mut lower_data = data.subset(&below);
    lower_data.bounds = DoseBounds::new(data.bounds.lo, m_max)?;
    let mut upper_data = data.subset(&above);
    upper_data.bounds = DoseBounds::new(m_min, data.bounds.hi)?;

    let lower_cfg = SurrogateConfig {
        epsilon: config.epsilon.min(0.5 * lower_data.bounds.width()),
        ..*config
    };
    let upper_cfg = SurrogateConfig {
        epsilon: config.epsilon.min(0.5 * upper_data.bounds.width()),
        ..*config
    };
    let (lo_fit, up_fit) = join(
        || fit_lower(&lower_data, &lower_cfg, threshold, None),
        || fit_upper(&upper_data, &upper_cfg, threshold, None),
    );
    Ok(IntervalPolicyModel {
        side: Side::TwoSided,
        lower: lo_fit?.lower,
        upper: up_fit?.upper,
        bounds: data.bounds,
        alpha: config.alpha,
        threshold: threshold.clone(),
    })
}

#[cfg(feature = "parallel")]
fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    rayon::join(a, b)
}

#[cfg(not(feature = "parallel"))]
fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA,
    B: FnOnce() -> RB,
{
    (a(), b())
}

pub const MIDPOINT_GRID: usize = 200;

/// Plug-in optimal dose per row: least squares of `Y` on
/// `(1, A, A^2, X, A X)`, argmax over a 200-point dose grid (lowest index on
/// ties), clipped to `[a_L + eps, a_U - eps]`.
pub fn estimate_midpoint(data: &Dataset, config: &SurrogateConfig) -> Result<Vec<f64>> {
    let n = data.n();
    let d = data.d();
    let p = 3 + 2 * d;
    let mut design = Matrix::zeros(n, p);
    for i in 0..n {
        let a = data.a[i];
        let row = design.row_mut(i);
        row[0] = 1.0;
        row[1] = a;
        row[2] = a * a;
        for (j, &x) in data.x.row(i).iter().enumerate() {
            row[3 + j] = x;
            row[3 + d + j] = a * x;
        }
    }
    let ls = least_squares(&design, &data.y)?;
    if ls.ridged {
        warn!("midpoint regression design was singular; ridge fallback used");
    }
    let c = &ls.coef;
    let b = data.bounds;
    let grid: Vec<f64> = (0..MIDPOINT_GRID)
        .map(|k| b.lo + b.width() * k as f64 / (MIDPOINT_GRID - 1) as f64)
        .collect();
    let eps = config.epsilon;
    Ok((0..n)
        .map(|i| {
            let x = data.x.row(i);
            // only the dose-dependent part matters for the argmax
            let lin = c[1] + x.iter().enumerate().map(|(j, xj)| c[3 + d + j] * xj).sum::<f64>();
            let mut best = (f64::NEG_INFINITY, grid[0]);
            for &a in &grid {
                let v = lin * a + c[2] * a * a;
                if v > best.0 {
                    best = (v, a);
                }
            }
            best.1.clamp(b.lo + eps, b.hi - eps)
        })
        .collect())
}
