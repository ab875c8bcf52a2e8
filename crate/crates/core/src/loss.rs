//! Truncated-hinge surrogate losses and the regularized primal objective.

use crate::error::{PdiError, Result};
use crate::linalg::Matrix;
use crate::types::{Dataset, Side, SurrogateConfig};

/// `min{(a - b)_+ / eps, 1}`.
#[inline]
pub fn psi_eps(a: f64, b: f64, eps: f64) -> f64 {
    ((a - b) / eps).clamp(0.0, 1.0)
}

/// Convex pieces `(psi1, psi2)` with `psi_eps = psi1 - psi2`:
/// `psi1 = ((a - b) / eps)_+`, `psi2 = ((a - b) / eps - 1)_+`.
#[inline]
pub fn psi_eps_parts(a: f64, b: f64, eps: f64) -> (f64, f64) {
    let t = (a - b) / eps;
    (t.max(0.0), (t - 1.0).max(0.0))
}

/// Soft membership of `b` in `[a, c]`: zero outside, one on `[a + eps, c - eps]`,
/// linear ramps of slope `1/eps` in between.
///
/// When `c - a < 2 eps` the two ramps meet and the smaller one applies, which
/// keeps the function continuous and `1/eps`-Lipschitz in `b`.
#[inline]
pub fn psi_in(a: f64, b: f64, c: f64, eps: f64) -> f64 {
    if b < a || b > c {
        return 0.0;
    }
    let rise = (b - a) / eps;
    let fall = (c - b) / eps;
    rise.min(fall).min(1.0)
}

#[inline]
pub fn psi_out(a: f64, b: f64, c: f64, eps: f64) -> f64 {
    1.0 - psi_in(a, b, c, eps)
}

/// Weighted surrogate loss of one row for a lower bound `f`.
///
/// `favourable` is `Y > S`: a favourable outcome below the bound is a false
/// negative, an unfavourable one at or above the bound a false positive.
#[inline]
pub fn lower_row_loss(alpha: f64, eps: f64, w: f64, favourable: bool, a: f64, f: f64) -> f64 {
    if favourable {
        w * (1.0 - alpha) * psi_eps(f, a, eps)
    } else {
        w * alpha * psi_eps(a, f, eps)
    }
}

/// Mirror of [`lower_row_loss`] for an upper bound.
#[inline]
pub fn upper_row_loss(alpha: f64, eps: f64, w: f64, favourable: bool, a: f64, f: f64) -> f64 {
    lower_row_loss(alpha, eps, w, favourable, -a, -f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub contributions: Vec<f64>,
    pub loss: f64,
    pub regularization: f64,
    pub objective: f64,
}

/// `(lambda/2) v' K v`.
pub fn quadratic_penalty(lambda: f64, coef: &[f64], gram: &Matrix) -> f64 {
    let mut acc = 0.0;
    for (i, vi) in coef.iter().enumerate() {
        if *vi == 0.0 {
            continue;
        }
        let row = gram.row(i);
        acc += vi * row.iter().zip(coef).map(|(k, vj)| k * vj).sum::<f64>();
    }
    0.5 * lambda * acc
}

/// Bound values `f_i = sum_j K_ij v_j + v_0` at the training rows.
pub fn fitted_values(gram: &Matrix, coef: &[f64], intercept: f64) -> Vec<f64> {
    gram.rows_iter()
        .map(|row| row.iter().zip(coef).map(|(k, v)| k * v).sum::<f64>() + intercept)
        .collect()
}

/// Regularized weighted surrogate risk of `(coef, intercept)` on the training rows.
pub fn primal_objective(
    data: &Dataset,
    coef: &[f64],
    intercept: f64,
    gram: &Matrix,
    config: &SurrogateConfig,
    thresholds: &[f64],
    side: Side,
) -> Result<LossTerms> {
    let w = data.weights()?;
    let n = data.n();
    for (what, len) in [
        ("coefficients", coef.len()),
        ("thresholds", thresholds.len()),
        ("gram rows", gram.nrows()),
    ] {
        if len != n {
            return Err(PdiError::DimensionMismatch {
                what,
                expected: n,
                found: len,
            });
        }
    }
    let row_loss = match side {
        Side::LowerOneSided => lower_row_loss,
        Side::UpperOneSided => upper_row_loss,
        Side::TwoSided => {
            return Err(PdiError::Unsupported(
                "primal objective takes one bound function".into(),
            ))
        }
    };
    let f = fitted_values(gram, coef, intercept);
    let contributions: Vec<f64> = (0..n)
        .map(|i| {
            row_loss(
                config.alpha,
                config.epsilon,
                w[i],
                data.y[i] > thresholds[i],
                data.a[i],
                f[i],
            )
        })
        .collect();
    let loss = contributions.iter().sum::<f64>();
    let regularization = quadratic_penalty(config.lambda, coef, gram);
    Ok(LossTerms {
        contributions,
        loss,
        regularization,
        objective: loss + regularization,
    })
}
