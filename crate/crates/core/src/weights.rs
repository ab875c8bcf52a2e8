//! Generalized propensity weights for a continuous dose.
//!
//! The conditional dose density is modelled as a normal with a linear mean in
//! `X`, truncated to the dose bounds. Weights are the capped reciprocal
//! density, optionally rescaled to mean one.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{PdiError, Result};
use crate::linalg::{least_squares, Matrix};
use crate::types::{Dataset, DoseBounds};

pub const DEFAULT_CAP: f64 = 100.0;
/// Residual sd floor as a fraction of the dose range.
pub const SIGMA_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    /// Intercept followed by one slope per covariate.
    pub coef: Vec<f64>,
    pub sigma: f64,
    pub bounds: DoseBounds,
    pub cap: f64,
    pub normalize: bool,
    /// True when the residual sd hit the floor.
    pub sigma_floored: bool,
}

impl PropensityModel {
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.coef[0] + self.coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn density(&self, a: f64, x: &[f64]) -> Result<f64> {
        density(self, a, x)
    }
}

/// Least-squares fit of `A` on `(1, X)`; residual sd with `n - d - 1`
/// degrees of freedom.
pub fn fit_propensity(data: &Dataset) -> Result<PropensityModel> {
    let n = data.n();
    let d = data.d();
    if n <= d + 1 {
        return Err(PdiError::InsufficientRows {
            needed: d + 1,
            have: n,
        });
    }
    let mut design = Matrix::zeros(n, d + 1);
    for i in 0..n {
        let row = design.row_mut(i);
        row[0] = 1.0;
        row[1..].copy_from_slice(data.x.row(i));
    }
    let ls = least_squares(&design, &data.a)?;
    if ls.ridged {
        log::warn!("propensity design was singular; ridge fallback used");
    }
    let raw_sigma = (ls.rss / (n - d - 1) as f64).sqrt();
    let floor = SIGMA_FLOOR_FRACTION * data.bounds.width();
    Ok(PropensityModel {
        coef: ls.coef,
        sigma: raw_sigma.max(floor),
        bounds: data.bounds,
        cap: DEFAULT_CAP,
        normalize: true,
        sigma_floored: raw_sigma < floor,
    })
}

/// Density at `a` of `N(mean, sigma^2)` truncated to `bounds`.
pub fn truncated_normal_density(a: f64, mean: f64, sigma: f64, bounds: DoseBounds) -> Result<f64> {
    if !bounds.contains(a) {
        return Err(PdiError::OutOfSupport {
            value: a,
            lo: bounds.lo,
            hi: bounds.hi,
        });
    }
    let std = Normal::standard();
    let mass = std.cdf((bounds.hi - mean) / sigma) - std.cdf((bounds.lo - mean) / sigma);
    Ok(std.pdf((a - mean) / sigma) / (sigma * mass))
}

pub fn density(model: &PropensityModel, a: f64, x: &[f64]) -> Result<f64> {
    if x.len() + 1 != model.coef.len() {
        return Err(PdiError::DimensionMismatch {
            what: "propensity covariates",
            expected: model.coef.len() - 1,
            found: x.len(),
        });
    }
    truncated_normal_density(a, model.mean(x), model.sigma, model.bounds)
}

/// `w_i = min(1 / p(A_i | X_i), cap)`, rescaled to mean one when `normalize`.
pub fn compute_weights(
    model: &PropensityModel,
    data: &Dataset,
    cap: f64,
    normalize: bool,
) -> Result<Vec<f64>> {
    let mut w = (0..data.n())
        .map(|i| density(model, data.a[i], data.x.row(i)).map(|p| (1.0 / p).min(cap)))
        .collect::<Result<Vec<f64>>>()?;
    if normalize {
        let m = crate::linalg::mean(&w);
        w.iter_mut().for_each(|v| *v /= m);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> DoseBounds {
        DoseBounds::new(-2.0, 2.0).unwrap()
    }

    #[test]
    fn density_spot_value() {
        let p = truncated_normal_density(0.0, 0.0, 0.5, bounds()).unwrap();
        // phi(0)/0.5 over Phi(4) - Phi(-4), with phi(0) = 1/sqrt(2 pi)
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let mass = 1.0 - 2.0 * 3.167_124_183_311_992e-5;
        assert!((p - phi0 / 0.5 / mass).abs() < 1e-10);
        assert!((p - 0.797_935).abs() < 1e-6);
    }

    #[test]
    fn density_symmetry_and_support() {
        let b = bounds();
        for &a in &[0.1, 0.7, 1.9] {
            let l = truncated_normal_density(a, 0.0, 0.8, b).unwrap();
            let r = truncated_normal_density(-a, 0.0, 0.8, b).unwrap();
            assert!((l - r).abs() < 1e-14);
        }
        assert!(truncated_normal_density(2.5, 0.0, 0.5, b).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let b = bounds();
        for &(mu, s) in &[(0.0, 0.5), (0.9, 0.7), (-1.5, 1.3)] {
            // composite Simpson on 20_000 panels
            let m = 20_000;
            let h = b.width() / m as f64;
            let mut acc = 0.0;
            for k in 0..=m {
                let a = b.lo + k as f64 * h;
                let wgt = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += wgt * truncated_normal_density(a, mu, s, b).unwrap();
            }
            assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
        }
    }

    fn linear_data(noise: &[f64]) -> Dataset {
        let n = noise.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![-1.0 + 2.0 * i as f64 / n as f64, ((i * 13) % n) as f64 / n as f64])
            .collect();
        let a: Vec<f64> = rows.iter().zip(noise).map(|(r, e)| 0.5 * r[0] + e).collect();
        Dataset::new(Matrix::from_rows(&rows).unwrap(), a, vec![0.0; n], None, bounds()).unwrap()
    }

    #[test]
    fn exact_linear_dose_hits_sigma_floor() {
        let data = linear_data(&[0.0; 40]);
        let m = fit_propensity(&data).unwrap();
        assert!((m.coef[1] - 0.5).abs() < 1e-8);
        assert!(m.coef[2].abs() < 1e-8);
        assert!(m.sigma_floored);
        assert_eq!(m.sigma, SIGMA_FLOOR_FRACTION * 4.0);
    }

    #[test]
    fn too_few_rows() {
        let data = linear_data(&[0.0, 0.1, 0.2]);
        assert!(matches!(
            fit_propensity(&data),
            Err(PdiError::InsufficientRows { .. })
        ));
    }

    #[test]
    fn weights_cap_and_normalization() {
        let m = PropensityModel {
            coef: vec![0.0, 0.0],
            sigma: 1e6,
            bounds: bounds(),
            cap: 100.0,
            normalize: false,
            sigma_floored: false,
        };
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let data = Dataset::new(
            Matrix::from_rows(&rows).unwrap(),
            vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            vec![0.0; 5],
            None,
            bounds(),
        )
        .unwrap();
        // near-flat density 1/4 everywhere
        let w = compute_weights(&m, &data, 100.0, false).unwrap();
        for v in &w {
            assert!((v - 4.0).abs() < 1e-6);
        }
        let wn = compute_weights(&m, &data, 100.0, true).unwrap();
        for v in &wn {
            assert!((v - 1.0).abs() < 1e-9);
        }
        let capped = compute_weights(&m, &data, 2.0, false).unwrap();
        assert!(capped.iter().all(|v| *v == 2.0));
    }
}
