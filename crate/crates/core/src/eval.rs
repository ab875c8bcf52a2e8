//! Weighted empirical risk, cross-validated tuning and the replicated
//! simulation benchmark.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dc::{estimate_midpoint, fit_lower, fit_two_sided, fit_upper};
use crate::error::{PdiError, Result};
use crate::indirect::{fit_indirect, IndirectModel};
use crate::kernel::median_heuristic;
use crate::linalg::{mean, sample_sd};
use crate::loss::{psi_eps, psi_in};
use crate::par;
use crate::simulation::{derive_seed, generate, rng_from, true_weights, ScenarioSpec};
use crate::types::{
    Dataset, DoseBounds, IntervalPolicy, IntervalPolicyModel, KernelSpec, Side, SurrogateConfig,
    ThresholdSpec,
};
use crate::weights::{compute_weights, fit_propensity, DEFAULT_CAP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// `alpha * fp_mass + (1 - alpha) * fn_mass`.
    pub risk: f64,
    /// Plug-in truncated-hinge risk at ramp width `epsilon`.
    pub surrogate: f64,
    pub n_test: usize,
    /// Mean of `w I(Y <= S) I(A in interval)`.
    pub fp_mass: f64,
    /// Mean of `w I(Y > S) I(A not in interval)`.
    pub fn_mass: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

/// Per-row `(fp, fn, surrogate)` contributions, weights included.
fn row_terms(
    policy: &dyn IntervalPolicy,
    x: &[f64],
    a: f64,
    favourable: bool,
    w: f64,
    alpha: f64,
    eps: f64,
) -> (f64, f64, f64) {
    let (lo, hi) = policy.interval(x);
    let inside = a >= lo && a <= hi;
    let sur = match policy.side() {
        Side::LowerOneSided => {
            if favourable {
                (1.0 - alpha) * psi_eps(lo, a, eps)
            } else {
                alpha * psi_eps(a, lo, eps)
            }
        }
        Side::UpperOneSided => {
            if favourable {
                (1.0 - alpha) * psi_eps(a, hi, eps)
            } else {
                alpha * psi_eps(hi, a, eps)
            }
        }
        Side::TwoSided => {
            let pin = psi_in(lo, a, hi, eps);
            if favourable {
                (1.0 - alpha) * (1.0 - pin)
            } else {
                alpha * pin
            }
        }
    };
    let fp = if !favourable && inside { w } else { 0.0 };
    let fneg = if favourable && !inside { w } else { 0.0 };
    (fp, fneg, w * sur)
}

/// Weighted misclassification risk of `policy` on `test`.
pub fn empirical_risk(
    policy: &dyn IntervalPolicy,
    test: &Dataset,
    thresholds: &[f64],
    alpha: f64,
    epsilon: f64,
) -> Result<RiskReport> {
    let w = test.weights()?;
    let n = test.n();
    if thresholds.len() != n {
        return Err(PdiError::DimensionMismatch {
            what: "threshold values",
            expected: n,
            found: thresholds.len(),
        });
    }
    let terms = par::map_range(n, |i| {
        row_terms(
            policy,
            test.x.row(i),
            test.a[i],
            test.y[i] > thresholds[i],
            w[i],
            alpha,
            epsilon,
        )
    });
    let nf = n as f64;
    let (mut fp, mut fneg, mut sur) = (0.0, 0.0, 0.0);
    for (a, b, c) in terms {
        fp += a;
        fneg += b;
        sur += c;
    }
    let fp_mass = fp / nf;
    let fn_mass = fneg / nf;
    Ok(RiskReport {
        risk: alpha * fp_mass + (1.0 - alpha) * fn_mass,
        surrogate: sur / nf,
        n_test: n,
        fp_mass,
        fn_mass,
        alpha,
        epsilon,
    })
}

/// Per-row difference between the 0-1 loss and the surrogate loss, for
/// Monte-Carlo error bars on the surrogate gap.
pub fn risk_gap_terms(
    policy: &dyn IntervalPolicy,
    test: &Dataset,
    thresholds: &[f64],
    alpha: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let w = test.weights()?;
    Ok(par::map_range(test.n(), |i| {
        let fav = test.y[i] > thresholds[i];
        let (fp, fneg, sur) = row_terms(policy, test.x.row(i), test.a[i], fav, w[i], alpha, epsilon);
        alpha * fp + (1.0 - alpha) * fneg - sur
    }))
}

/// Fitted policy of any supported method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FittedPolicy {
    Direct(IntervalPolicyModel),
    IndirectLogistic(IndirectModel),
}

impl FittedPolicy {
    pub fn dim(&self) -> usize {
        match self {
            FittedPolicy::Direct(m) => m.dim(),
            FittedPolicy::IndirectLogistic(m) => m.dim,
        }
    }

    pub fn threshold(&self) -> &ThresholdSpec {
        match self {
            FittedPolicy::Direct(m) => &m.threshold,
            FittedPolicy::IndirectLogistic(m) => &m.threshold,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            FittedPolicy::Direct(m) => m.alpha,
            FittedPolicy::IndirectLogistic(m) => m.alpha,
        }
    }
}

impl IntervalPolicy for FittedPolicy {
    fn side(&self) -> Side {
        match self {
            FittedPolicy::Direct(m) => m.side(),
            FittedPolicy::IndirectLogistic(m) => m.side(),
        }
    }

    fn dose_bounds(&self) -> DoseBounds {
        match self {
            FittedPolicy::Direct(m) => m.dose_bounds(),
            FittedPolicy::IndirectLogistic(m) => m.dose_bounds(),
        }
    }

    fn interval(&self, x: &[f64]) -> (f64, f64) {
        match self {
            FittedPolicy::Direct(m) => m.interval(x),
            FittedPolicy::IndirectLogistic(m) => m.interval(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LoLinear,
    LoGaussian,
    IndirectLogistic,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::LoLinear => "lo-linear",
            Method::LoGaussian => "lo-gaussian",
            Method::IndirectLogistic => "indirect-logistic",
        }
    }

    pub fn display(&self) -> &'static str {
        match self {
            Method::LoLinear => "L-O-Learning",
            Method::LoGaussian => "G-O-Learning",
            Method::IndirectLogistic => "Logistic",
        }
    }

    pub fn is_direct(&self) -> bool {
        !matches!(self, Method::IndirectLogistic)
    }
}

impl std::str::FromStr for Method {
    type Err = PdiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lo-linear" => Ok(Method::LoLinear),
            "lo-gaussian" => Ok(Method::LoGaussian),
            "indirect-logistic" => Ok(Method::IndirectLogistic),
            other => Err(PdiError::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// `k` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (l, h) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| (l + (h - l) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Default regularization grid for the direct learners at sample size `n`.
pub fn default_lambda_grid(n: usize) -> Vec<f64> {
    log_grid(1e-3, 1e2, 7).into_iter().map(|v| v / n as f64).collect()
}

pub fn default_l1_grid() -> Vec<f64> {
    log_grid(1e-4, 1e-1, 7)
}

/// Everything but the tuned penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub method: Method,
    pub side: Side,
    pub alpha: f64,
    /// Ramp width; `None` uses `(a_U - a_L) n^{-1/3}`.
    pub epsilon: Option<f64>,
    /// Gaussian bandwidth; `None` uses the median heuristic.
    pub gamma: Option<f64>,
    pub max_dc_iters: usize,
    pub descent_tolerance: f64,
}

impl FitSettings {
    pub fn new(method: Method, side: Side, alpha: f64) -> Self {
        Self {
            method,
            side,
            alpha,
            epsilon: None,
            gamma: None,
            max_dc_iters: SurrogateConfig::DEFAULT_MAX_DC_ITERS,
            descent_tolerance: SurrogateConfig::DEFAULT_DESCENT_TOLERANCE,
        }
    }

    /// Pins data-dependent defaults (epsilon, bandwidth) from the full
    /// training set so that every CV fold shares them.
    pub fn resolved(&self, data: &Dataset) -> Result<FitSettings> {
        let mut s = self.clone();
        if s.epsilon.is_none() {
            s.epsilon = Some(SurrogateConfig::default_epsilon(data.bounds, data.n()));
        }
        if s.method == Method::LoGaussian && s.gamma.is_none() {
            s.gamma = Some(median_heuristic(&data.x)?);
        }
        Ok(s)
    }

    pub fn kernel(&self, data: &Dataset) -> Result<KernelSpec> {
        Ok(match self.method {
            Method::LoGaussian => KernelSpec::Gaussian {
                gamma: match self.gamma {
                    Some(g) => g,
                    None => median_heuristic(&data.x)?,
                },
            },
            _ => KernelSpec::Linear,
        })
    }

    pub fn epsilon_for(&self, data: &Dataset) -> f64 {
        self.epsilon
            .unwrap_or_else(|| SurrogateConfig::default_epsilon(data.bounds, data.n()))
    }

    pub fn surrogate_config(&self, data: &Dataset, lambda: f64) -> Result<SurrogateConfig> {
        Ok(SurrogateConfig {
            alpha: self.alpha,
            epsilon: self.epsilon_for(data),
            lambda,
            kernel: self.kernel(data)?,
            max_dc_iters: self.max_dc_iters,
            descent_tolerance: self.descent_tolerance,
        })
    }
}

/// Fits one method at one penalty value (lambda for the direct learners, L1
/// strength for the indirect one).
pub fn fit_policy(
    data: &Dataset,
    threshold: &ThresholdSpec,
    settings: &FitSettings,
    penalty: f64,
) -> Result<FittedPolicy> {
    match settings.method {
        Method::IndirectLogistic => {
            if settings.side != Side::LowerOneSided {
                return Err(PdiError::Unsupported(
                    "the indirect baseline only extracts lower bounds".into(),
                ));
            }
            Ok(FittedPolicy::IndirectLogistic(fit_indirect(
                data,
                threshold,
                settings.alpha,
                penalty,
            )?))
        }
        Method::LoLinear | Method::LoGaussian => {
            let cfg = settings.surrogate_config(data, penalty)?;
            let model = match settings.side {
                Side::LowerOneSided => fit_lower(data, &cfg, threshold, None)?,
                Side::UpperOneSided => fit_upper(data, &cfg, threshold, None)?,
                Side::TwoSided => {
                    let mid = estimate_midpoint(data, &cfg)?;
                    fit_two_sided(data, &cfg, threshold, &mid)?
                }
            };
            Ok(FittedPolicy::Direct(model))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvCriterion {
    /// Weighted 0-1 risk.
    #[default]
    ZeroOne,
    Surrogate,
}

impl std::str::FromStr for CvCriterion {
    type Err = PdiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-one" => Ok(CvCriterion::ZeroOne),
            "surrogate" => Ok(CvCriterion::Surrogate),
            other => Err(PdiError::InvalidConfig(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub penalty: f64,
    pub mean_risk: f64,
    pub fold_risks: Vec<f64>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_index: usize,
    pub best_penalty: f64,
    pub table: Vec<CvRow>,
    pub stratified: bool,
}

impl CvResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("penalty,mean_risk,failures,fold_risks\n");
        for r in &self.table {
            let folds: Vec<String> = r.fold_risks.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{},{},{},{}", r.penalty, r.mean_risk, r.failures, folds.join(";"));
        }
        s
    }
}

fn single_class(idx: &[usize], labels: &[bool]) -> bool {
    let pos = idx.iter().filter(|&&i| labels[i]).count();
    pos == 0 || pos == idx.len()
}

/// Fold id per row: stratified by label, re-drawn up to ten times when some
/// held-out fold holds a single class, then unstratified.
pub fn assign_folds(labels: &[bool], folds: usize, seed: u64) -> (Vec<usize>, bool) {
    let n = labels.len();
    for attempt in 0..10u64 {
        let mut rng = rng_from(derive_seed(seed, "cv-folds", attempt));
        let mut assign = vec![0usize; n];
        let mut counter = 0usize;
        for class in [true, false] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            for i in idx {
                assign[i] = counter % folds;
                counter += 1;
            }
        }
        let ok = (0..folds).all(|f| {
            let held: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
            !held.is_empty() && !single_class(&held, labels)
        });
        if ok {
            return (assign, true);
        }
    }
    let mut rng = rng_from(derive_seed(seed, "cv-folds-plain", 0));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut assign = vec![0usize; n];
    for (k, i) in idx.into_iter().enumerate() {
        assign[i] = k % folds;
    }
    (assign, false)
}

/// K-fold selection of the penalty minimizing held-out weighted risk. Ties
/// go to the larger penalty, then to the earlier grid entry.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate<P, F>(
    data: &Dataset,
    grid: &[f64],
    threshold: &ThresholdSpec,
    alpha: f64,
    epsilon: f64,
    folds: usize,
    seed: u64,
    criterion: CvCriterion,
    fit: F,
) -> Result<CvResult>
where
    P: IntervalPolicy,
    F: Fn(&Dataset, f64) -> Result<P> + Sync + Send,
{
    if grid.is_empty() {
        return Err(PdiError::InvalidConfig("empty tuning grid".into()));
    }
    if folds < 2 || data.n() < folds {
        return Err(PdiError::InsufficientRows {
            needed: folds,
            have: data.n(),
        });
    }
    data.weights()?;
    let s = threshold.values(&data.x)?;
    let labels: Vec<bool> = data.y.iter().zip(&s).map(|(y, t)| y > t).collect();
    let (assign, stratified) = assign_folds(&labels, folds, seed);
    let splits: Vec<(Dataset, Dataset, Vec<f64>)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| assign[i] != f).collect();
            let held: Vec<usize> = (0..data.n()).filter(|&i| assign[i] == f).collect();
            let s_held = held.iter().map(|&i| s[i]).collect();
            (data.subset(&train), data.subset(&held), s_held)
        })
        .collect();

    let units = grid.len() * folds;
    let risks: Vec<Option<f64>> = par::map_range(units, |u| {
        let (g, f) = (u / folds, u % folds);
        let (train, held, s_held) = &splits[f];
        let policy = fit(train, grid[g]).ok()?;
        let rep = empirical_risk(&policy, held, s_held, alpha, epsilon).ok()?;
        Some(match criterion {
            CvCriterion::ZeroOne => rep.risk,
            CvCriterion::Surrogate => rep.surrogate,
        })
    });

    let table: Vec<CvRow> = (0..grid.len())
        .map(|g| {
            let fold: Vec<Option<f64>> = risks[g * folds..(g + 1) * folds].to_vec();
            let failures = fold.iter().filter(|r| r.is_none()).count();
            let mean_risk = if failures > 0 {
                f64::INFINITY
            } else {
                mean(&fold.iter().map(|r| r.unwrap()).collect::<Vec<_>>())
            };
            CvRow {
                penalty: grid[g],
                mean_risk,
                fold_risks: fold.into_iter().map(|r| r.unwrap_or(f64::NAN)).collect(),
                failures,
            }
        })
        .collect();

    let mut best = 0;
    for (g, row) in table.iter().enumerate().skip(1) {
        let b = &table[best];
        if row.mean_risk < b.mean_risk
            || (row.mean_risk == b.mean_risk && row.penalty > b.penalty)
        {
            best = g;
        }
    }
    Ok(CvResult {
        best_index: best,
        best_penalty: table[best].penalty,
        table,
        stratified,
    })
}

/// Source of training weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSource {
    /// Parametric propensity model fitted on the training data.
    Fit,
    /// True assignment density (simulation only).
    True,
    /// Column `w` of the data file.
    File,
}

impl std::str::FromStr for WeightSource {
    type Err = PdiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fit" => Ok(WeightSource::Fit),
            "true" => Ok(WeightSource::True),
            "file" => Ok(WeightSource::File),
            other => Err(PdiError::InvalidConfig(format!("unknown weight source `{other}`"))),
        }
    }
}

/// Fitted-propensity weights with the given cap and normalization.
pub fn fitted_weights(data: &Dataset, cap: f64, normalize: bool) -> Result<Vec<f64>> {
    let mut model = fit_propensity(data)?;
    model.cap = cap;
    model.normalize = normalize;
    compute_weights(&model, data, cap, normalize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub epsilon: Option<f64>,
    /// `None` uses [`default_lambda_grid`] at the training size.
    pub lambda_grid: Option<Vec<f64>>,
    pub l1_grid: Vec<f64>,
    pub folds: usize,
    pub reps: usize,
    pub test_n: usize,
    pub seed: u64,
    pub weight_source: WeightSource,
    pub weight_cap: f64,
    pub normalize_weights: bool,
    pub criterion: CvCriterion,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::LoLinear, Method::LoGaussian, Method::IndirectLogistic],
            alpha: 0.5,
            epsilon: None,
            lambda_grid: None,
            l1_grid: default_l1_grid(),
            folds: 5,
            reps: 20,
            test_n: 10_000,
            seed: 2024,
            weight_source: WeightSource::Fit,
            weight_cap: DEFAULT_CAP,
            normalize_weights: true,
            criterion: CvCriterion::ZeroOne,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scenario: String,
    pub sigma2: f64,
    pub n: usize,
    pub d: usize,
    pub confounded: bool,
    pub method: Method,
    pub mean_risk: f64,
    pub sd_risk: f64,
    pub n_reps: usize,
    pub n_fail: usize,
    /// Test risk per replication; `None` marks a failure.
    pub per_rep: Vec<Option<f64>>,
}

/// Training/test pair for one replication; shared by every method.
pub fn replication_data(spec: &ScenarioSpec, cfg: &BenchmarkConfig, rep: usize) -> Result<(Dataset, Dataset)> {
    let train_spec = ScenarioSpec {
        seed: derive_seed(cfg.seed, "train", rep as u64),
        ..spec.clone()
    };
    let test_spec = ScenarioSpec {
        n: cfg.test_n,
        seed: derive_seed(cfg.seed, "test", rep as u64),
        ..spec.clone()
    };
    let train = generate(&train_spec)?;
    let mut test = generate(&test_spec)?;
    let tw = true_weights(spec, &test)?;
    test = test.with_weights(tw)?;
    Ok((train, test))
}

fn training_weights(spec: &ScenarioSpec, cfg: &BenchmarkConfig, train: &Dataset) -> Result<Vec<f64>> {
    match cfg.weight_source {
        WeightSource::Fit => fitted_weights(train, cfg.weight_cap, cfg.normalize_weights),
        WeightSource::True => true_weights(spec, train),
        WeightSource::File => Err(PdiError::Unsupported(
            "file weights are not available inside the simulation benchmark".into(),
        )),
    }
}

/// Test risk of each method in one replication.
pub fn run_replication(spec: &ScenarioSpec, cfg: &BenchmarkConfig, rep: usize) -> Vec<Result<f64>> {
    let prepared = (|| {
        let (train, test) = replication_data(spec, cfg, rep)?;
        let w = training_weights(spec, cfg, &train)?;
        let train = train.with_weights(w)?;
        let threshold = ThresholdSpec::fit_polynomial(&train.x, &train.y)?;
        let s_test = threshold.values(&test.x)?;
        Ok::<_, PdiError>((train, test, threshold, s_test))
    })();
    let (train, test, threshold, s_test) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return cfg
                .methods
                .iter()
                .map(|_| Err(PdiError::InvalidConfig(format!("replication setup failed: {msg}"))))
                .collect();
        }
    };
    par::map_slice(&cfg.methods, |&method| {
        let settings = FitSettings {
            epsilon: cfg.epsilon,
            ..FitSettings::new(method, Side::LowerOneSided, cfg.alpha)
        }
        .resolved(&train)?;
        let grid = match method {
            Method::IndirectLogistic => cfg.l1_grid.clone(),
            _ => cfg
                .lambda_grid
                .clone()
                .unwrap_or_else(|| default_lambda_grid(train.n())),
        };
        let eps = settings.epsilon_for(&train);
        let cv = cross_validate(
            &train,
            &grid,
            &threshold,
            cfg.alpha,
            eps,
            cfg.folds,
            derive_seed(cfg.seed, "cv", rep as u64),
            cfg.criterion,
            |d, p| fit_policy(d, &threshold, &settings, p),
        )?;
        let policy = fit_policy(&train, &threshold, &settings, cv.best_penalty)?;
        Ok(empirical_risk(&policy, &test, &s_test, cfg.alpha, eps)?.risk)
    })
}

/// Replicated benchmark of every configured method on one scenario.
pub fn benchmark(spec: &ScenarioSpec, cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    spec.validate()?;
    let reps: Vec<Vec<Result<f64>>> = par::map_range(cfg.reps, |r| run_replication(spec, cfg, r));
    Ok(cfg
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let per_rep: Vec<Option<f64>> = reps
                .iter()
                .map(|r| match &r[m] {
                    Ok(v) => Some(*v),
                    Err(e) => {
                        log::warn!("{} replication failed: {e}", method.name());
                        None
                    }
                })
                .collect();
            let ok: Vec<f64> = per_rep.iter().flatten().copied().collect();
            BenchmarkRow {
                scenario: spec.scenario.to_string(),
                sigma2: spec.sigma2,
                n: spec.n,
                d: spec.d,
                confounded: spec.confounded,
                method,
                mean_risk: if ok.is_empty() { f64::NAN } else { mean(&ok) },
                sd_risk: sample_sd(&ok),
                n_reps: ok.len(),
                n_fail: per_rep.len() - ok.len(),
                per_rep,
            }
        })
        .collect())
}

pub const RESULTS_HEADER: &str = "scenario,sigma2,n,d,method,mean_risk,sd_risk,n_reps,n_fail";

pub fn results_csv(rows: &[BenchmarkRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.sigma2,
            r.n,
            r.d,
            r.method.name(),
            r.mean_risk,
            r.sd_risk,
            r.n_reps,
            r.n_fail
        );
    }
    s
}

/// Plain-text table: one line per setting, one `mean (sd)` column per method.
pub fn results_table(rows: &[BenchmarkRow]) -> String {
    let mut methods: Vec<Method> = Vec::new();
    let mut settings: Vec<(String, f64, usize, usize, bool)> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        let key = (r.scenario.clone(), r.sigma2, r.n, r.d, r.confounded);
        if !settings.contains(&key) {
            settings.push(key);
        }
    }
    let mut out = format!("{:<10} {:>7} {:>5} {:>4} {:>6}", "scenario", "sigma2", "n", "d", "conf");
    for m in &methods {
        let _ = write!(out, " {:>18}", m.display());
    }
    out.push('\n');
    for key in settings {
        let _ = write!(
            out,
            "{:<10} {:>7} {:>5} {:>4} {:>6}",
            key.0,
            key.1,
            key.2,
            key.3,
            if key.4 { "yes" } else { "no" }
        );
        for m in &methods {
            let cell = rows
                .iter()
                .find(|r| (r.scenario.clone(), r.sigma2, r.n, r.d, r.confounded) == key && r.method == *m)
                .map(|r| {
                    let mut c = format!("{:.3} ({:.3})", r.mean_risk, r.sd_risk);
                    if r.n_fail > 0 {
                        let _ = write!(c, "[{}f]", r.n_fail);
                    }
                    c
                })
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {cell:>18}");
        }
        out.push('\n');
    }
    out
}
