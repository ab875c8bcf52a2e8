//! Dense convex QP with per-coordinate boxes and a single sum-to-zero
//! constraint:
//!
//! ```text
//! min  1/2 b'Kb + q'b   s.t.  lo <= b <= hi,  sum(b) = 0
//! ```
//!
//! Solved by two-coordinate (SMO-style) descent. Each step moves mass
//! `+delta` onto one coordinate and `-delta` off another, so the equality
//! holds by construction; the pair is chosen with second-order working-set
//! selection and the step is the clipped closed-form minimizer.

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("qp dimension mismatch: {0}")]
    Dimension(String),
    #[error("qp gram matrix is not symmetric")]
    NotSymmetric,
    #[error("qp box {index} is inverted: lo {lo} > hi {hi}")]
    InvertedBox { index: usize, lo: f64, hi: f64 },
    #[error("qp infeasible: sum(lo) = {sum_lo}, sum(hi) = {sum_hi}")]
    Infeasible { sum_lo: f64, sum_hi: f64 },
}

#[derive(Clone, Debug)]
pub struct QpProblem<'a> {
    pub k: &'a Matrix,
    pub q: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    /// Largest violation of the KKT conditions at `beta`.
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub const DEFAULT_TOL: f64 = 1e-6;
/// Pair updates allowed per coordinate.
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// `1/2 b'Kb + q'b`.
pub fn objective(k: &Matrix, q: &[f64], beta: &[f64]) -> f64 {
    let mut quad = 0.0;
    for (i, bi) in beta.iter().enumerate() {
        if *bi != 0.0 {
            quad += bi * k.row(i).iter().zip(beta).map(|(kij, bj)| kij * bj).sum::<f64>();
        }
    }
    0.5 * quad + q.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
}

/// Maximum KKT violation: `max_{b_j > lo_j} g_j - min_{b_i < hi_i} g_i`, floored at 0.
pub fn kkt_residual(grad: &[f64], beta: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut min_up = f64::INFINITY;
    let mut max_low = f64::NEG_INFINITY;
    for t in 0..grad.len() {
        if beta[t] < hi[t] {
            min_up = min_up.min(grad[t]);
        }
        if beta[t] > lo[t] {
            max_low = max_low.max(grad[t]);
        }
    }
    if min_up.is_finite() && max_low.is_finite() {
        (max_low - min_up).max(0.0)
    } else {
        0.0
    }
}

pub fn solve_qp(p: &QpProblem<'_>, tol: f64, max_sweeps: usize) -> Result<QpSolution, QpError> {
    solve_inner(p, None, tol, max_sweeps, None)
}

/// Like [`solve_qp`], starting from `start` clipped to the box and repaired.
pub fn solve_qp_from(
    p: &QpProblem<'_>,
    start: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<QpSolution, QpError> {
    if start.len() != p.q.len() {
        return Err(QpError::Dimension(format!(
            "start has {} entries, problem {}",
            start.len(),
            p.q.len()
        )));
    }
    solve_inner(p, Some(start), tol, max_sweeps, None)
}

/// Like [`solve_qp`], also returning the objective after every pair update.
pub fn solve_qp_traced(
    p: &QpProblem<'_>,
    tol: f64,
    max_sweeps: usize,
) -> Result<(QpSolution, Vec<f64>), QpError> {
    let mut trace = Vec::new();
    let sol = solve_inner(p, None, tol, max_sweeps, Some(&mut trace))?;
    Ok((sol, trace))
}

fn check(p: &QpProblem<'_>) -> Result<(), QpError> {
    let n = p.q.len();
    if p.k.nrows() != n || p.k.ncols() != n || p.lo.len() != n || p.hi.len() != n {
        return Err(QpError::Dimension(format!(
            "K is {}x{}, q {}, lo {}, hi {}",
            p.k.nrows(),
            p.k.ncols(),
            n,
            p.lo.len(),
            p.hi.len()
        )));
    }
    if !p.k.is_symmetric() {
        return Err(QpError::NotSymmetric);
    }
    for i in 0..n {
        if p.lo[i] > p.hi[i] {
            return Err(QpError::InvertedBox {
                index: i,
                lo: p.lo[i],
                hi: p.hi[i],
            });
        }
    }
    let sum_lo: f64 = p.lo.iter().sum();
    let sum_hi: f64 = p.hi.iter().sum();
    let slack = 1e-12 * (1.0 + p.lo.iter().chain(&p.hi).fold(0.0_f64, |m, v| m.max(v.abs())));
    if sum_lo > slack || sum_hi < -slack {
        return Err(QpError::Infeasible { sum_lo, sum_hi });
    }
    Ok(())
}

/// `start` (zero by default) projected onto the box, then greedily repaired
/// to sum to zero.
fn initial_point(lo: &[f64], hi: &[f64], start: Option<&[f64]>) -> Vec<f64> {
    let mut beta: Vec<f64> = (0..lo.len())
        .map(|i| start.map_or(0.0, |s| s[i]).clamp(lo[i], hi[i]))
        .collect();
    let mut excess: f64 = beta.iter().sum();
    for i in 0..beta.len() {
        if excess == 0.0 {
            break;
        }
        if excess > 0.0 {
            let room = beta[i] - lo[i];
            let step = room.min(excess);
            beta[i] = if step == room { lo[i] } else { beta[i] - step };
            excess -= step;
        } else {
            let room = hi[i] - beta[i];
            let step = room.min(-excess);
            beta[i] = if step == room { hi[i] } else { beta[i] + step };
            excess += step;
        }
    }
    beta
}

fn solve_inner(
    p: &QpProblem<'_>,
    start: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<QpSolution, QpError> {
    check(p)?;
    let n = p.q.len();
    let k = p.k;
    let (lo, hi) = (&p.lo, &p.hi);
    let mut beta = initial_point(lo, hi, start);

    let mut grad: Vec<f64> = (0..n)
        .map(|i| k.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + p.q[i])
        .collect();

    let trace_k = (0..n).map(|i| k.get(i, i)).sum::<f64>();
    let tau = (1e-10 * trace_k / n.max(1) as f64).max(1e-12);
    let max_iter = max_sweeps.saturating_mul(n.max(1));
    let mut iterations = 0;
    let mut converged = false;

    if let Some(t) = trace.as_deref_mut() {
        t.push(objective(k, &p.q, &beta));
    }

    // coordinates that may still move; the rest are pinned at a bound and
    // skipped until the active block converges
    let mut active: Vec<usize> = (0..n).collect();
    let shrink_every = n.clamp(1, 1000);
    let mut since_shrink = 0;

    while iterations < max_iter {
        // i: steepest coordinate that can still increase
        let mut i = usize::MAX;
        let mut g_i = f64::INFINITY;
        let mut max_low = f64::NEG_INFINITY;
        for &t in &active {
            if beta[t] < hi[t] && grad[t] < g_i {
                g_i = grad[t];
                i = t;
            }
            if beta[t] > lo[t] && grad[t] > max_low {
                max_low = grad[t];
            }
        }
        let stalled = i == usize::MAX || !max_low.is_finite() || max_low - g_i <= tol;

        if since_shrink >= shrink_every && !stalled {
            since_shrink = 0;
            active.retain(|&t| {
                let at_lo = beta[t] <= lo[t];
                let at_hi = beta[t] >= hi[t];
                !((at_lo && at_hi) || (at_lo && grad[t] > max_low) || (at_hi && grad[t] < g_i))
            });
        }
        if stalled {
            if active.len() == n {
                converged = true;
                break;
            }
            for (t, g) in grad.iter_mut().enumerate() {
                *g = k.row(t).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + p.q[t];
            }
            active = (0..n).collect();
            since_shrink = 0;
            continue;
        }

        // j: coordinate that can decrease with the largest second-order gain
        let kii = k.get(i, i);
        let ki = k.row(i);
        let mut j = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for &t in &active {
            if beta[t] > lo[t] {
                let diff = grad[t] - g_i;
                if diff > 0.0 {
                    let mut eta = kii + k.get(t, t) - 2.0 * ki[t];
                    if eta <= 0.0 {
                        eta = tau;
                    }
                    let gain = diff * diff / eta;
                    if gain > best_gain {
                        best_gain = gain;
                        j = t;
                    }
                }
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }

        let mut eta = kii + k.get(j, j) - 2.0 * ki[j];
        if eta <= 0.0 {
            eta = tau;
        }
        let room_i = hi[i] - beta[i];
        let room_j = beta[j] - lo[j];
        let newton = (grad[j] - grad[i]) / eta;
        let delta = newton.min(room_i).min(room_j);
        if delta <= 0.0 {
            // numerical stall; nothing left to gain on this pair
            converged = active.len() == n && max_low - g_i <= tol;
            break;
        }
        beta[i] = if delta == room_i { hi[i] } else { beta[i] + delta };
        beta[j] = if delta == room_j { lo[j] } else { (beta[j] - delta).max(lo[j]) };
        let kj = k.row(j);
        for &t in &active {
            grad[t] += delta * (ki[t] - kj[t]);
        }
        iterations += 1;
        since_shrink += 1;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(objective(k, &p.q, &beta));
        }
    }

    // refresh the gradient to report an exact residual
    let grad: Vec<f64> = (0..n)
        .map(|i| k.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + p.q[i])
        .collect();
    let kkt = kkt_residual(&grad, &beta, lo, hi);
    Ok(QpSolution {
        objective: objective(k, &p.q, &beta),
        kkt_residual: kkt,
        converged: converged || kkt <= tol,
        iterations,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_two_dim() {
        let k = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = QpProblem {
            k: &k,
            q: vec![1.0, -1.0],
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
        };
        let s = solve_qp(&p, 1e-9, 100).unwrap();
        assert!(s.converged);
        assert!((s.beta[0] + 1.0).abs() < 1e-12 && (s.beta[1] - 1.0).abs() < 1e-12);
        assert!((s.objective + 1.0).abs() < 1e-12);
        // brute-force grid at step 1e-4 on b1 with b2 = -b1
        let mut best = f64::INFINITY;
        for step in 0..=20_000 {
            let b1 = -1.0 + step as f64 * 1e-4;
            best = best.min(objective(&k, &p.q, &[b1, -b1]));
        }
        assert!((s.objective - best).abs() < 1e-6);
    }

    #[test]
    fn pinned_box_gives_zero() {
        let k = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let p = QpProblem {
            k: &k,
            q: vec![0.0, 0.0],
            lo: vec![0.0, 0.0],
            hi: vec![0.0, 0.0],
        };
        let s = solve_qp(&p, 1e-9, 100).unwrap();
        assert_eq!(s.beta, vec![0.0, 0.0]);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn infeasible_and_malformed() {
        let k = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = QpProblem {
            k: &k,
            q: vec![0.0; 2],
            lo: vec![0.5, 0.5],
            hi: vec![1.0, 1.0],
        };
        assert!(matches!(solve_qp(&p, 1e-6, 10), Err(QpError::Infeasible { .. })));
        let ns = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        let p = QpProblem {
            k: &ns,
            q: vec![0.0; 2],
            lo: vec![-1.0; 2],
            hi: vec![1.0; 2],
        };
        assert_eq!(solve_qp(&p, 1e-6, 10), Err(QpError::NotSymmetric));
    }

    #[test]
    fn infeasible_zero_start_is_repaired() {
        let k = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let p = QpProblem {
            k: &k,
            q: vec![0.0, 0.0, 0.0],
            lo: vec![0.5, -2.0, -2.0],
            hi: vec![1.0, 2.0, 2.0],
        };
        let s = solve_qp(&p, 1e-10, 1000).unwrap();
        assert!(s.beta.iter().sum::<f64>().abs() < 1e-12);
        assert!((s.beta[0] - 0.5).abs() < 1e-9);
        assert!((s.beta[1] + 0.25).abs() < 1e-6 && (s.beta[2] + 0.25).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap_flags_nonconvergence() {
        let k = Matrix::from_rows(&[vec![1.0, 0.9, 0.8], vec![0.9, 1.0, 0.9], vec![0.8, 0.9, 1.0]])
            .unwrap();
        let p = QpProblem {
            k: &k,
            q: vec![3.0, -1.0, 0.5],
            lo: vec![-100.0; 3],
            hi: vec![100.0; 3],
        };
        let s = solve_qp(&p, 1e-14, 0).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 0);
        assert!(s.kkt_residual > 0.0);
    }

    #[test]
    fn trace_is_monotone() {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..8).map(|j| ((i * j) as f64 * 0.3).cos()).collect())
            .collect();
        let b = Matrix::from_rows(&rows).unwrap();
        let mut km = Matrix::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                km.set(i, j, crate::kernel::dot(b.row(i), b.row(j)));
            }
        }
        let p = QpProblem {
            k: &km,
            q: (0..8).map(|i| (i as f64) - 3.5).collect(),
            lo: vec![-1.0; 8],
            hi: vec![2.0; 8],
        };
        let (s, tr) = solve_qp_traced(&p, 1e-9, 1000).unwrap();
        assert!(s.converged);
        for w in tr.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
