//! Domain types shared across the crate: datasets, thresholds, kernels,
//! fitted interval policies and the surrogate configuration.

use serde::{Deserialize, Serialize};

use crate::error::{PdiError, Result};
use crate::linalg::{least_squares, Matrix};

/// Admissible dose range `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseBounds {
    pub lo: f64,
    pub hi: f64,
}

impl DoseBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(PdiError::InvalidBounds { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn clip(&self, a: f64) -> f64 {
        a.clamp(self.lo, self.hi)
    }

    #[inline]
    pub fn contains(&self, a: f64) -> bool {
        a >= self.lo && a <= self.hi
    }

    pub fn negated(&self) -> Self {
        Self {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

/// Observational sample `(X_i, A_i, Y_i)` with optional inverse-density weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Option<Vec<f64>>,
    pub bounds: DoseBounds,
}

impl Dataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(
        x: Matrix,
        a: Vec<f64>,
        y: Vec<f64>,
        w: Option<Vec<f64>>,
        bounds: DoseBounds,
    ) -> Result<Self> {
        validate_dataset(Dataset {
            x,
            a,
            y,
            w,
            bounds,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.a.len()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn weights(&self) -> Result<&[f64]> {
        self.w.as_deref().ok_or(PdiError::MissingWeights)
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        self.w = Some(w);
        validate_dataset(self)
    }

    /// Rows in the given order; weights follow the rows.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            w: self
                .w
                .as_ref()
                .map(|w| idx.iter().map(|&i| w[i]).collect()),
            bounds: self.bounds,
        }
    }

    /// Reflects the dose axis: `A -> -A`, `[lo, hi] -> [-hi, -lo]`.
    pub fn negate_doses(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            a: self.a.iter().map(|a| -a).collect(),
            y: self.y.clone(),
            w: self.w.clone(),
            bounds: self.bounds.negated(),
        }
    }

    /// Row-wise concatenation of two datasets with matching shape.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.d() != other.d() {
            return Err(PdiError::DimensionMismatch {
                what: "covariate columns",
                expected: self.d(),
                found: other.d(),
            });
        }
        let mut rows = self.x.to_rows();
        rows.extend(other.x.to_rows());
        let w = match (&self.w, &other.w) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Dataset::new(
            Matrix::from_rows(&rows)?,
            self.a.iter().chain(&other.a).copied().collect(),
            self.y.iter().chain(&other.y).copied().collect(),
            w,
            self.bounds,
        )
    }
}

/// Checks shapes, finiteness, dose support and weight positivity.
/// Rows are reported 1-based.
pub fn validate_dataset(raw: Dataset) -> Result<Dataset> {
    let n = raw.a.len();
    if n == 0 {
        return Err(PdiError::Empty);
    }
    if raw.x.ncols() == 0 {
        return Err(PdiError::DimensionMismatch {
            what: "covariate columns",
            expected: 1,
            found: 0,
        });
    }
    if raw.x.nrows() != n {
        return Err(PdiError::DimensionMismatch {
            what: "covariate rows",
            expected: n,
            found: raw.x.nrows(),
        });
    }
    if raw.y.len() != n {
        return Err(PdiError::DimensionMismatch {
            what: "outcome length",
            expected: n,
            found: raw.y.len(),
        });
    }
    DoseBounds::new(raw.bounds.lo, raw.bounds.hi)?;
    for i in 0..n {
        for (j, v) in raw.x.row(i).iter().enumerate() {
            if !v.is_finite() {
                return Err(PdiError::NonFinite {
                    row: i + 1,
                    column: format!("x{}", j + 1),
                });
            }
        }
        if !raw.a[i].is_finite() {
            return Err(PdiError::NonFinite {
                row: i + 1,
                column: "a".into(),
            });
        }
        if !raw.y[i].is_finite() {
            return Err(PdiError::NonFinite {
                row: i + 1,
                column: "y".into(),
            });
        }
        if !raw.bounds.contains(raw.a[i]) {
            return Err(PdiError::DoseOutOfBounds {
                row: i + 1,
                value: raw.a[i],
                lo: raw.bounds.lo,
                hi: raw.bounds.hi,
            });
        }
    }
    if let Some(w) = &raw.w {
        if w.len() != n {
            return Err(PdiError::DimensionMismatch {
                what: "weight length",
                expected: n,
                found: w.len(),
            });
        }
        for (i, &v) in w.iter().enumerate() {
            if !v.is_finite() {
                return Err(PdiError::NonFinite {
                    row: i + 1,
                    column: "w".into(),
                });
            }
            if v <= 0.0 {
                return Err(PdiError::NonPositiveWeight { row: i + 1, value: v });
            }
        }
    }
    Ok(raw)
}

/// Outcome threshold `S(x)` defining a favourable outcome `Y > S(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThresholdSpec {
    Constant {
        value: f64,
    },
    /// `intercept + sum_j linear_j x_j + sum_j square_j x_j^2`.
    FittedPolynomial {
        intercept: f64,
        linear: Vec<f64>,
        square: Vec<f64>,
    },
}

impl ThresholdSpec {
    /// Least-squares fit of `Y` on main effects and squares of `X`.
    pub fn fit_polynomial(x: &Matrix, y: &[f64]) -> Result<Self> {
        let d = x.ncols();
        let mut design = Matrix::zeros(x.nrows(), 1 + 2 * d);
        for i in 0..x.nrows() {
            let row = design.row_mut(i);
            row[0] = 1.0;
            for (j, &v) in x.row(i).iter().enumerate() {
                row[1 + j] = v;
                row[1 + d + j] = v * v;
            }
        }
        let ls = least_squares(&design, y)?;
        Ok(ThresholdSpec::FittedPolynomial {
            intercept: ls.coef[0],
            linear: ls.coef[1..=d].to_vec(),
            square: ls.coef[1 + d..].to_vec(),
        })
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self {
            ThresholdSpec::Constant { value } => Ok(*value),
            ThresholdSpec::FittedPolynomial {
                intercept,
                linear,
                square,
            } => {
                if linear.len() != x.len() || square.len() != x.len() {
                    return Err(PdiError::DimensionMismatch {
                        what: "threshold covariates",
                        expected: linear.len(),
                        found: x.len(),
                    });
                }
                Ok(intercept
                    + x.iter()
                        .zip(linear)
                        .zip(square)
                        .map(|((xj, b), c)| b * xj + c * xj * xj)
                        .sum::<f64>())
            }
        }
    }

    /// `S(X_i)` for every row.
    pub fn values(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.rows_iter().map(|r| self.evaluate(r)).collect()
    }
}

/// Free-function form of [`ThresholdSpec::evaluate`].
pub fn evaluate_threshold(spec: &ThresholdSpec, x: &[f64]) -> Result<f64> {
    spec.evaluate(x)
}

/// Reproducing kernel of the bound-function class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    Linear,
    /// `exp(-gamma^2 ||x - x'||^2)`.
    Gaussian { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                PdiError::InvalidConfig(format!("gaussian gamma must be positive, got {gamma}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    #[serde(rename = "lower")]
    LowerOneSided,
    #[serde(rename = "upper")]
    UpperOneSided,
    TwoSided,
}

impl std::str::FromStr for Side {
    type Err = PdiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(Side::LowerOneSided),
            "upper" => Ok(Side::UpperOneSided),
            "two-sided" => Ok(Side::TwoSided),
            other => Err(PdiError::InvalidConfig(format!("unknown side `{other}`"))),
        }
    }
}

/// `f(x) = sum_j coef_j k(x, X_j) + intercept` over the stored training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFunction {
    pub kernel: KernelSpec,
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub support: Matrix,
}

impl BoundFunction {
    pub fn constant(kernel: KernelSpec, support: Matrix, value: f64) -> Self {
        Self {
            kernel,
            coef: vec![0.0; support.nrows()],
            intercept: value,
            support,
        }
    }

    /// Unclipped value of the expansion at `x`.
    pub fn raw(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (j, c) in self.coef.iter().enumerate() {
            if *c != 0.0 {
                acc += c * crate::kernel::eval(&self.kernel, x, self.support.row(j));
            }
        }
        acc + self.intercept
    }

    pub fn negated(&self) -> Self {
        Self {
            kernel: self.kernel,
            coef: self.coef.iter().map(|c| -c).collect(),
            intercept: -self.intercept,
            support: self.support.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }
}

/// Anything that recommends a dose interval at a covariate vector.
pub trait IntervalPolicy: Sync {
    fn side(&self) -> Side;
    fn dose_bounds(&self) -> DoseBounds;
    /// Closed recommended interval `[lower, upper]`, inside the dose bounds.
    fn interval(&self, x: &[f64]) -> (f64, f64);
}

/// Fitted kernel interval policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalPolicyModel {
    pub side: Side,
    pub lower: Option<BoundFunction>,
    pub upper: Option<BoundFunction>,
    pub bounds: DoseBounds,
    pub alpha: f64,
    pub threshold: ThresholdSpec,
}

impl IntervalPolicyModel {
    pub fn dim(&self) -> usize {
        self.lower
            .as_ref()
            .or(self.upper.as_ref())
            .map_or(0, BoundFunction::dim)
    }

    pub fn lower_bound(&self, x: &[f64]) -> f64 {
        self.interval(x).0
    }

    pub fn upper_bound(&self, x: &[f64]) -> f64 {
        self.interval(x).1
    }
}

impl IntervalPolicy for IntervalPolicyModel {
    fn side(&self) -> Side {
        self.side
    }

    fn dose_bounds(&self) -> DoseBounds {
        self.bounds
    }

    fn interval(&self, x: &[f64]) -> (f64, f64) {
        let b = self.bounds;
        let lo = self.lower.as_ref().map(|f| b.clip(f.raw(x)));
        let hi = self.upper.as_ref().map(|f| b.clip(f.raw(x)));
        match (lo, hi) {
            (Some(l), Some(u)) => (l.min(u), u),
            (Some(l), None) => (l, b.hi),
            (None, Some(u)) => (b.lo, u),
            (None, None) => (b.lo, b.hi),
        }
    }
}

/// Parameters of the regularized truncated-hinge objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub alpha: f64,
    /// Ramp width in dose units.
    pub epsilon: f64,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub max_dc_iters: usize,
    pub descent_tolerance: f64,
}

impl SurrogateConfig {
    pub const DEFAULT_MAX_DC_ITERS: usize = 100;
    pub const DEFAULT_DESCENT_TOLERANCE: f64 = 1e-7;

    /// `epsilon = (a_U - a_L) n^{-1/3}`.
    pub fn default_epsilon(bounds: DoseBounds, n: usize) -> f64 {
        bounds.width() * (n.max(1) as f64).powf(-1.0 / 3.0)
    }

    pub fn new(alpha: f64, epsilon: f64, lambda: f64, kernel: KernelSpec) -> Self {
        Self {
            alpha,
            epsilon,
            lambda,
            kernel,
            max_dc_iters: Self::DEFAULT_MAX_DC_ITERS,
            descent_tolerance: Self::DEFAULT_DESCENT_TOLERANCE,
        }
    }

    pub fn validate(&self, bounds: DoseBounds) -> Result<()> {
        let bad = |m: String| Err(PdiError::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon < bounds.width()) {
            return bad(format!(
                "epsilon must lie in (0, {}), got {}",
                bounds.width(),
                self.epsilon
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.max_dc_iters == 0 {
            return bad("max_dc_iters must be positive".into());
        }
        if !(self.descent_tolerance > 0.0) {
            return bad("descent_tolerance must be positive".into());
        }
        self.kernel.validate()
    }
}
