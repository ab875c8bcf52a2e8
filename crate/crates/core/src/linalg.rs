//! Small dense helpers: a row-major covariate matrix and a least-squares solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};

/// Row-major dense matrix; rows are observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PdiError::DimensionMismatch {
                what: "matrix buffer",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(PdiError::DimensionMismatch {
                    what: "matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Subset of rows in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Solution of a least-squares problem.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub coef: Vec<f64>,
    pub rss: f64,
    /// True when the normal equations needed the ridge fallback.
    pub ridged: bool,
}

/// Ordinary least squares via the normal equations, falling back to a
/// 1e-8 ridge when the Gram matrix is not positive definite.
pub fn least_squares(design: &Matrix, target: &[f64]) -> Result<LeastSquares> {
    let n = design.nrows();
    let p = design.ncols();
    if target.len() != n {
        return Err(PdiError::DimensionMismatch {
            what: "least-squares target",
            expected: n,
            found: target.len(),
        });
    }
    // fixed summation order keeps results bit-identical across builds
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (row, &y) in design.rows_iter().zip(target) {
        for a in 0..p {
            xty[a] += row[a] * y;
            for b in a..p {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }

    let (beta, ridged) = match xtx.clone().cholesky() {
        Some(ch) if well_conditioned(&ch) => (ch.solve(&xty), false),
        _ => {
            let scale = (xtx.trace() / p.max(1) as f64).max(1.0);
            let mut ridge = xtx;
            for k in 0..p {
                ridge[(k, k)] += 1e-8 * scale;
            }
            let ch = ridge
                .cholesky()
                .ok_or_else(|| PdiError::InvalidConfig("singular least-squares design".into()))?;
            (ch.solve(&xty), true)
        }
    };
    let coef: Vec<f64> = beta.iter().copied().collect();
    let rss = design
        .rows_iter()
        .zip(target)
        .map(|(row, &y)| {
            let r = y - row.iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>();
            r * r
        })
        .sum();
    Ok(LeastSquares { coef, rss, ridged })
}

fn well_conditioned(ch: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = ch.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|k| l[(k, k)]).collect();
    let max = diag.iter().copied().fold(0.0_f64, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    diag.is_empty() || (min.is_finite() && min > max * 1e-7)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolated empirical quantile of an unsorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit() {
        let design = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            vec![1.0, 3.0],
        ])
        .unwrap();
        let y = [1.0, 3.0, 5.0, 7.0];
        let ls = least_squares(&design, &y).unwrap();
        assert!((ls.coef[0] - 1.0).abs() < 1e-10);
        assert!((ls.coef[1] - 2.0).abs() < 1e-10);
        assert!(!ls.ridged);
    }

    #[test]
    fn collinear_design_takes_ridge_path() {
        let design = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![3.0, 6.0],
        ])
        .unwrap();
        let ls = least_squares(&design, &[1.0, 2.0, 3.0]).unwrap();
        assert!(ls.ridged);
        assert!(ls.rss < 1e-6);
    }

    #[test]
    fn quantiles() {
        let xs = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 0.25), 2.0);
    }
}
