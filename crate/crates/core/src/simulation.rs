//! Simulated dosing studies with known outcome and assignment mechanisms.
//!
//! Covariates are `Uniform(-1, 1)^d`. Doses are either a truncated normal
//! around a covariate-dependent mean (confounded) or `Uniform(-2, 2)`.
//! Outcomes are normal around a sigmoid dose response shifted by a
//! prognostic term. Because the mechanisms are known, the module also
//! exposes the exact outcome probabilities and assignment densities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{PdiError, Result};
use crate::linalg::Matrix;
use crate::types::{Dataset, DoseBounds, ThresholdSpec};

pub const DOSE_LO: f64 = -2.0;
pub const DOSE_HI: f64 = 2.0;
/// The `0.5` in `N(mu_A, 0.5)`.
pub const DOSE_SPREAD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Linear lower bound.
    S1,
    /// Nonlinear lower bound.
    S2,
    /// Response high on a central dose plateau, low on both sides.
    TwoSidedPlateau,
}

impl std::str::FromStr for Scenario {
    type Err = PdiError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(Scenario::S1),
            "s2" | "2" => Ok(Scenario::S2),
            "plateau" | "two-sided-plateau" => Ok(Scenario::TwoSidedPlateau),
            other => Err(PdiError::InvalidConfig(format!("unknown scenario `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::TwoSidedPlateau => "plateau",
        })
    }
}

/// How the `0.5` in the dose distribution is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoseSpreadReading {
    #[default]
    Variance,
    StdDev,
}

impl std::str::FromStr for DoseSpreadReading {
    type Err = PdiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(DoseSpreadReading::Variance),
            "std-dev" => Ok(DoseSpreadReading::StdDev),
            other => Err(PdiError::InvalidConfig(format!("unknown dose spread `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub d: usize,
    pub sigma2: f64,
    pub confounded: bool,
    pub seed: u64,
    #[serde(default)]
    pub dose_spread: DoseSpreadReading,
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Standard normal CDF via the complementary error function.
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, n: usize, d: usize, sigma2: f64, confounded: bool, seed: u64) -> Self {
        Self {
            scenario,
            n,
            d,
            sigma2,
            confounded,
            seed,
            dose_spread: DoseSpreadReading::Variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 4 {
            return Err(PdiError::InvalidConfig(format!(
                "scenario needs d >= 4, got {}",
                self.d
            )));
        }
        if self.n == 0 {
            return Err(PdiError::Empty);
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(PdiError::InvalidConfig(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }

    pub fn bounds(&self) -> DoseBounds {
        DoseBounds {
            lo: DOSE_LO,
            hi: DOSE_HI,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Standard deviation of the confounded dose distribution before truncation.
    pub fn dose_sd(&self) -> f64 {
        match self.dose_spread {
            DoseSpreadReading::Variance => DOSE_SPREAD.sqrt(),
            DoseSpreadReading::StdDev => DOSE_SPREAD,
        }
    }

    /// Mean of the (untruncated) dose distribution.
    pub fn mu_a(&self, x: &[f64]) -> f64 {
        match self.scenario {
            Scenario::S1 | Scenario::TwoSidedPlateau => 0.3 * x[0] + 0.3 * x[1] + 0.3 * x[2],
            Scenario::S2 => {
                0.75 * (x[0].abs() + 1.0).ln() - 0.2 * (std::f64::consts::PI * x[1]).cos()
                    + if x[2] > 0.0 { 0.2 } else { 0.0 }
                    - 0.4
            }
        }
    }

    /// Prognostic term `D(x)`.
    pub fn prognostic(&self, x: &[f64]) -> f64 {
        match self.scenario {
            Scenario::S1 | Scenario::TwoSidedPlateau => 0.6 * x[1] + 0.6 * x[2] + 0.6 * x[3],
            Scenario::S2 => {
                0.4 * (std::f64::consts::PI * x[1]).sin()
                    + if x[2] > 0.0 { 0.4 } else { 0.0 }
                    + 0.4 * x[3].abs()
            }
        }
    }

    /// Dose-response part of the outcome mean, `mu_Y - D(x)`.
    pub fn dose_response(&self, a: f64, x: &[f64]) -> f64 {
        match self.scenario {
            // 5 e^{10a} / (e^{10c} + e^{10a}) = 5 logistic(10 (a - c))
            Scenario::S1 | Scenario::S2 => 5.0 * logistic(10.0 * (a - self.mu_a(x))),
            Scenario::TwoSidedPlateau => {
                5.0 * (logistic(10.0 * (a + 0.5)) - logistic(10.0 * (a - 0.5)))
            }
        }
    }

    pub fn mu_y(&self, a: f64, x: &[f64]) -> f64 {
        self.dose_response(a, x) + self.prognostic(x)
    }

    /// `S(x) = 2.5 + D(x)` when `D` is a polynomial (S1 and plateau).
    pub fn oracle_threshold(&self) -> Option<ThresholdSpec> {
        match self.scenario {
            Scenario::S2 => None,
            Scenario::S1 | Scenario::TwoSidedPlateau => {
                let mut linear = vec![0.0; self.d];
                linear[1] = 0.6;
                linear[2] = 0.6;
                linear[3] = 0.6;
                Some(ThresholdSpec::FittedPolynomial {
                    intercept: 2.5,
                    linear,
                    square: vec![0.0; self.d],
                })
            }
        }
    }
}

/// `P{Y(a) > s | x} = Phi((mu_Y(a, x) - s) / sigma)`.
pub fn true_prob_above(spec: &ScenarioSpec, a: f64, x: &[f64], s: f64) -> f64 {
    std_normal_cdf((spec.mu_y(a, x) - s) / spec.sigma())
}

/// Reciprocal of the true assignment density `p(a | x)`.
pub fn true_inverse_density(spec: &ScenarioSpec, a: f64, x: &[f64]) -> Result<f64> {
    let b = spec.bounds();
    if !b.contains(a) {
        return Err(PdiError::OutOfSupport {
            value: a,
            lo: b.lo,
            hi: b.hi,
        });
    }
    if !spec.confounded {
        return Ok(b.width());
    }
    let mu = spec.mu_a(x);
    let sd = spec.dose_sd();
    let z = (a - mu) / sd;
    let pdf = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let mass = std_normal_cdf((b.hi - mu) / sd) - std_normal_cdf((b.lo - mu) / sd);
    Ok(mass / pdf)
}

/// True inverse densities for every row, divided by the dose-range width so
/// that their expectation is one.
pub fn true_weights(spec: &ScenarioSpec, data: &Dataset) -> Result<Vec<f64>> {
    let width = spec.bounds().width();
    (0..data.n())
        .map(|i| true_inverse_density(spec, data.a[i], data.x.row(i)).map(|w| w / width))
        .collect()
}

/// Seed for a named substream: `(base, label, index)` mixed with splitmix64.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    // FNV-1a of the label
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for _ in 0..2 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z = x ^ (x >> 31);
    }
    z
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random_range(-1.0..1.0);
        if u > -1.0 {
            return u;
        }
    }
}

/// Rejection sampler for `N(mean, sd^2)` truncated to `[lo, hi]`.
pub fn sample_truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("positive sd");
    loop {
        let v = normal.sample(rng);
        if v >= lo && v <= hi {
            return v;
        }
    }
}

/// Draws `spec.n` rows. Weights are left empty.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed);
    let b = spec.bounds();
    let noise = Normal::new(0.0, spec.sigma()).expect("positive sigma");
    let mut x = Matrix::zeros(spec.n, spec.d);
    let mut a = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        for v in x.row_mut(i) {
            *v = open_unit(&mut rng);
        }
        let row = x.row(i);
        let dose = if spec.confounded {
            sample_truncated_normal(&mut rng, spec.mu_a(row), spec.dose_sd(), b.lo, b.hi)
        } else {
            rng.random_range(b.lo..=b.hi)
        };
        let outcome = spec.mu_y(dose, row) + noise.sample(&mut rng);
        a.push(dose);
        y.push(outcome);
    }
    Dataset::new(x, a, y, None, b)
}

/// Boundary dose where `P{Y(a) > s | x}` crosses `alpha`, found by bisection
/// on `[lo, hi]`, assuming the probability is increasing there. Returns the
/// nearer endpoint when there is no crossing.
pub fn crossing_increasing(
    spec: &ScenarioSpec,
    x: &[f64],
    s: f64,
    alpha: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    let g = |a: f64| true_prob_above(spec, a, x, s) - alpha;
    if g(lo) >= 0.0 {
        return lo;
    }
    if g(hi) <= 0.0 {
        return hi;
    }
    let (mut l, mut h) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (l + h);
        if g(m) < 0.0 {
            l = m;
        } else {
            h = m;
        }
    }
    0.5 * (l + h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s: Scenario, confounded: bool) -> ScenarioSpec {
        ScenarioSpec::new(s, 500, 5, 2.25, confounded, 11)
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let s = spec(Scenario::S2, true);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a, b);
        let c = generate(&ScenarioSpec { seed: 12, ..s }).unwrap();
        assert_ne!(a.a, c.a);
    }

    #[test]
    fn support_invariants() {
        for sc in [Scenario::S1, Scenario::S2, Scenario::TwoSidedPlateau] {
            for conf in [true, false] {
                let d = generate(&spec(sc, conf)).unwrap();
                assert!(d.a.iter().all(|a| (-2.0..=2.0).contains(a)));
                assert!(d.x.as_slice().iter().all(|v| *v > -1.0 && *v < 1.0));
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(ScenarioSpec::new(Scenario::S1, 10, 3, 1.0, true, 0).validate().is_err());
        assert!(ScenarioSpec::new(Scenario::S1, 0, 4, 1.0, true, 0).validate().is_err());
        assert!(ScenarioSpec::new(Scenario::S1, 1, 4, 1.0, true, 0).validate().is_ok());
    }

    #[test]
    fn sigmoid_midpoint() {
        let s = spec(Scenario::S1, true);
        let x = [0.2, -0.4, 0.7, 0.1, 0.0];
        let mu = s.mu_a(&x);
        assert!((s.mu_y(mu, &x) - s.prognostic(&x) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn prob_above_values() {
        let s = spec(Scenario::S1, true);
        let x = [0.3, -0.1, 0.5, -0.2, 0.9];
        let a = 0.4;
        assert!((true_prob_above(&s, a, &x, s.mu_y(a, &x)) - 0.5).abs() < 1e-15);
        assert!((true_prob_above(&s, a, &x, -1e6) - 1.0).abs() < 1e-15);
        // mu_A = 0 and D = 0 at the origin
        let z = [0.0; 5];
        assert!((true_prob_above(&s, 0.0, &z, 2.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn prob_above_is_increasing_in_dose() {
        for sc in [Scenario::S1, Scenario::S2] {
            let s = spec(sc, true);
            let d = generate(&ScenarioSpec { n: 20, ..s.clone() }).unwrap();
            for i in 0..20 {
                let x = d.x.row(i);
                let thr = 2.5 + s.prognostic(x);
                let mut prev = 0.0;
                for k in 0..=400 {
                    let p = true_prob_above(&s, -2.0 + k as f64 * 0.01, x, thr);
                    assert!(p >= prev);
                    prev = p;
                }
            }
        }
    }

    #[test]
    fn inverse_density_cases() {
        let u = spec(Scenario::S1, false);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(true_inverse_density(&u, 1.3, &x).unwrap(), 4.0);
        let c = spec(Scenario::S1, true);
        let mu = c.mu_a(&x);
        let at_mode = true_inverse_density(&c, mu, &x).unwrap();
        for k in 0..=40 {
            let a = -2.0 + 0.1 * k as f64;
            assert!(true_inverse_density(&c, a, &x).unwrap() >= at_mode);
        }
        assert!(true_inverse_density(&c, 2.01, &x).is_err());
        // same quantity through the propensity module
        let p = crate::weights::truncated_normal_density(0.7, mu, c.dose_sd(), c.bounds()).unwrap();
        assert!((1.0 / p - true_inverse_density(&c, 0.7, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, "rep", 0);
        assert_eq!(a, derive_seed(7, "rep", 0));
        assert_ne!(a, derive_seed(7, "rep", 1));
        assert_ne!(a, derive_seed(7, "fold", 0));
        assert_ne!(a, derive_seed(8, "rep", 0));
    }

    #[test]
    fn plateau_crossings_near_half() {
        let s = spec(Scenario::TwoSidedPlateau, true);
        let x = [0.5, -0.3, 0.2, 0.9, 0.0];
        let thr = s.oracle_threshold().unwrap().evaluate(&x).unwrap();
        let lo = crossing_increasing(&s, &x, thr, 0.5, -2.0, 0.0);
        assert!((lo + 0.5).abs() < 1e-3);
    }
}
