//! Kernel evaluation, Gram matrices and the median-heuristic bandwidth.

use crate::error::{PdiError, Result};
use crate::linalg::Matrix;
use crate::par;
use crate::types::KernelSpec;

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `k(a, b)` for the given kernel.
#[inline]
pub fn eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    match *spec {
        KernelSpec::Linear => dot(a, b),
        KernelSpec::Gaussian { gamma } => (-(gamma * gamma) * squared_distance(a, b)).exp(),
    }
}

/// `K_ij = k(x_i, x2_j)`; `x2 = None` gives the symmetric Gram of `x`.
pub fn gram(spec: &KernelSpec, x: &Matrix, x2: Option<&Matrix>) -> Result<Matrix> {
    spec.validate()?;
    match x2 {
        None => {
            let n = x.nrows();
            // upper triangle per row, then mirrored so the result is exactly symmetric
            let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
                (i..n).map(|j| eval(spec, x.row(i), x.row(j))).collect()
            });
            let mut k = Matrix::zeros(n, n);
            for (i, r) in rows.into_iter().enumerate() {
                for (off, v) in r.into_iter().enumerate() {
                    k.set(i, i + off, v);
                    k.set(i + off, i, v);
                }
            }
            Ok(k)
        }
        Some(x2) => {
            if x2.ncols() != x.ncols() {
                return Err(PdiError::DimensionMismatch {
                    what: "kernel columns",
                    expected: x.ncols(),
                    found: x2.ncols(),
                });
            }
            let m = x2.nrows();
            let rows: Vec<Vec<f64>> = par::map_range(x.nrows(), |i| {
                (0..m).map(|j| eval(spec, x.row(i), x2.row(j))).collect()
            });
            Matrix::from_row_major(x.nrows(), m, rows.concat())
        }
    }
}

/// `gamma = 1 / sqrt(m)` with `m` the median pairwise squared distance.
pub fn median_heuristic(x: &Matrix) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(PdiError::InsufficientRows { needed: 1, have: n });
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push(squared_distance(x.row(i), x.row(j)));
        }
    }
    d2.sort_by(f64::total_cmp);
    let len = d2.len();
    let median = if len % 2 == 1 {
        d2[len / 2]
    } else {
        0.5 * (d2[len / 2 - 1] + d2[len / 2])
    };
    if median <= 0.0 {
        return Err(PdiError::DegenerateBandwidth);
    }
    Ok(1.0 / median.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn spot_values() {
        let g = KernelSpec::Gaussian { gamma: 1.0 };
        assert_eq!(eval(&g, &[0.3, 0.1], &[0.3, 0.1]), 1.0);
        assert!((eval(&g, &[0.0, 0.0], &[1.0, 0.0]) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]), 11.0);
    }

    #[test]
    fn median_heuristic_cases() {
        assert_eq!(median_heuristic(&m(&[vec![0.0], vec![2.0]])).unwrap(), 0.5);
        // squared distances {1, 1, 4}
        assert_eq!(
            median_heuristic(&m(&[vec![0.0], vec![1.0], vec![2.0]])).unwrap(),
            1.0
        );
        assert!(matches!(
            median_heuristic(&m(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]])),
            Err(PdiError::DegenerateBandwidth)
        ));
    }

    #[test]
    fn gaussian_gram_has_unit_diagonal_and_is_psd() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()])
            .collect();
        let x = m(&rows);
        let k = gram(&KernelSpec::Gaussian { gamma: 0.8 }, &x, None).unwrap();
        assert!(k.is_symmetric());
        for i in 0..12 {
            assert_eq!(k.get(i, i), 1.0);
        }
        let km = nalgebra::DMatrix::from_row_slice(12, 12, k.as_slice());
        let min_eig = km.symmetric_eigenvalues().min();
        assert!(min_eig >= -1e-8 * 12.0);
    }

    #[test]
    fn cross_gram_dimension_mismatch() {
        let a = m(&[vec![0.0, 1.0]]);
        let b = m(&[vec![0.0]]);
        assert!(gram(&KernelSpec::Linear, &a, Some(&b)).is_err());
    }

    proptest! {
        #[test]
        fn gram_permutation_equivariance(
            vals in proptest::collection::vec(-1.0f64..1.0, 18),
            seed in 0u64..1000,
            gaussian in any::<bool>(),
        ) {
            let rows: Vec<Vec<f64>> = vals.chunks(3).map(|c| c.to_vec()).collect();
            let n = rows.len();
            let mut perm: Vec<usize> = (0..n).collect();
            // deterministic Fisher-Yates from the seed
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let spec = if gaussian { KernelSpec::Gaussian { gamma: 0.7 } } else { KernelSpec::Linear };
            let x = m(&rows);
            let k = gram(&spec, &x, None).unwrap();
            let kp = gram(&spec, &x.select_rows(&perm), None).unwrap();
            prop_assert!(k.is_symmetric());
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(kp.get(i, j), k.get(perm[i], perm[j]));
                }
            }
        }
    }
}
