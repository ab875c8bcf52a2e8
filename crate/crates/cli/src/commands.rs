use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pdi_core::eval::{
    benchmark as run_benchmark, cross_validate, default_l1_grid, default_lambda_grid,
    empirical_risk, fit_policy, fitted_weights, results_csv, results_table, BenchmarkConfig,
    BenchmarkRow, CvCriterion, FitSettings, Method, WeightSource,
};
use pdi_core::io::{
    read_covariates_path, read_dataset_path, write_dataset_path, ModelFile, ModelMeta,
};
use pdi_core::par::with_jobs;
use pdi_core::simulation::{derive_seed, generate, true_weights, DoseSpreadReading, Scenario, ScenarioSpec};
use pdi_core::types::{Dataset, DoseBounds, IntervalPolicy, Side, ThresholdSpec};

use crate::config::RunConfig;

type Overrides = Vec<(String, String)>;

const SIMULATE_KEYS: &[(&str, &str)] = &[
    ("scenario", "s1"),
    ("n", "400"),
    ("d", "10"),
    ("sigma2", "2.25"),
    ("confounded", "true"),
    ("test_n", "10000"),
    ("dose_spread", "variance"),
];

const FIT_KEYS: &[(&str, &str)] = &[
    ("data", ""),
    ("dgp", ""),
    ("method", "lo-linear"),
    ("side", "lower"),
    ("alpha", "0.5"),
    ("epsilon", "auto"),
    ("gamma", "auto"),
    ("lambda_grid", "auto"),
    ("l1_grid", "auto"),
    ("folds", "5"),
    ("criterion", "zero-one"),
    ("weights", "auto"),
    ("weight_cap", "100"),
    ("normalize_weights", "true"),
    ("threshold", "fit"),
    ("dose_lo", "-2"),
    ("dose_hi", "2"),
    ("max_dc_iters", "100"),
    ("descent_tolerance", "1e-7"),
];

const PREDICT_KEYS: &[(&str, &str)] = &[("model", ""), ("data", "")];

const EVALUATE_KEYS: &[(&str, &str)] = &[
    ("model", ""),
    ("data", ""),
    ("dgp", ""),
    ("weights", "auto"),
    ("weight_cap", "100"),
    ("normalize_weights", "true"),
];

const BENCHMARK_KEYS: &[(&str, &str)] = &[
    ("scenarios", "s1"),
    ("sigma2", "2.25"),
    ("n", "400"),
    ("d", "10"),
    ("confounded", "true"),
    ("methods", "lo-linear,lo-gaussian,indirect-logistic"),
    ("reps", "20"),
    ("test_n", "10000"),
    ("alpha", "0.5"),
    ("epsilon", "auto"),
    ("lambda_grid", "auto"),
    ("l1_grid", "auto"),
    ("folds", "5"),
    ("criterion", "zero-one"),
    ("weights", "fit"),
    ("weight_cap", "100"),
    ("normalize_weights", "true"),
];

fn required<'a>(cfg: &'a RunConfig, key: &str) -> Result<&'a str> {
    match cfg.str(key) {
        "" => bail!("missing required setting `{key}`"),
        v => Ok(v),
    }
}

fn load_dgp(cfg: &RunConfig) -> Result<Option<ScenarioSpec>> {
    cfg.path("dgp")
        .map(|p| -> Result<ScenarioSpec> {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text)?)
        })
        .transpose()
}

/// Attaches weights per the `weights` setting. Returns the source used.
fn attach_weights(
    cfg: &RunConfig,
    data: Dataset,
    dgp: Option<&ScenarioSpec>,
) -> Result<(Dataset, WeightSource)> {
    let source = match cfg.str("weights") {
        "auto" => {
            if data.w.is_some() {
                WeightSource::File
            } else {
                bail!(
                    "no weight source: the data has no `w` column; pass --weights fit, \
                     --weights true (with --dgp) or supply weights in the file"
                );
            }
        }
        other => other.parse::<WeightSource>()?,
    };
    let data = match source {
        WeightSource::File => {
            if data.w.is_none() {
                bail!("--weights file requires a `w` column");
            }
            data
        }
        WeightSource::Fit => {
            let w = fitted_weights(&data, cfg.parse("weight_cap")?, cfg.parse("normalize_weights")?)?;
            data.with_weights(w)?
        }
        WeightSource::True => {
            let spec = dgp.context("--weights true requires --dgp")?;
            let w = true_weights(spec, &data)?;
            data.with_weights(w)?
        }
    };
    Ok((data, source))
}

fn source_name(s: WeightSource) -> &'static str {
    match s {
        WeightSource::Fit => "fit",
        WeightSource::True => "true",
        WeightSource::File => "file",
    }
}

pub fn simulate(file: Option<&Path>, o: Overrides) -> Result<()> {
    let cfg = RunConfig::build(SIMULATE_KEYS, file, o)?;
    let seed = cfg.seed()?;
    let scenario: Scenario = cfg.parse("scenario")?;
    let mut spec = ScenarioSpec::new(
        scenario,
        cfg.parse("n")?,
        cfg.parse("d")?,
        cfg.parse("sigma2")?,
        cfg.parse("confounded")?,
        derive_seed(seed, "train", 0),
    );
    spec.dose_spread = cfg.parse::<DoseSpreadReading>("dose_spread")?;
    spec.validate()?;
    let test_spec = ScenarioSpec {
        n: cfg.parse("test_n")?,
        seed: derive_seed(seed, "test", 0),
        ..spec.clone()
    };
    let out = cfg.out_dir()?;
    let (train, test) = with_jobs(cfg.jobs()?, || -> Result<(Dataset, Dataset)> {
        let train = generate(&spec)?;
        let test = generate(&test_spec)?;
        let tw = true_weights(&spec, &test)?;
        Ok((train, test.with_weights(tw)?))
    })?;
    write_dataset_path(&out.join("train.csv"), &train)?;
    write_dataset_path(&out.join("test.csv"), &test)?;
    std::fs::write(out.join("dgp.json"), serde_json::to_string_pretty(&spec)?)?;
    cfg.echo()?;
    println!(
        "wrote {} training and {} test rows ({scenario}) to {}",
        train.n(),
        test.n(),
        out.display()
    );
    Ok(())
}

pub fn fit(file: Option<&Path>, o: Overrides) -> Result<()> {
    let cfg = RunConfig::build(FIT_KEYS, file, o)?;
    let seed = cfg.seed()?;
    let dgp = load_dgp(&cfg)?;
    let bounds = match &dgp {
        Some(s) => s.bounds(),
        None => DoseBounds::new(cfg.parse("dose_lo")?, cfg.parse("dose_hi")?)?,
    };
    let path = required(&cfg, "data")?.to_string();
    let data = read_dataset_path(Path::new(&path), bounds).with_context(|| format!("reading {path}"))?;
    let (data, source) = attach_weights(&cfg, data, dgp.as_ref())?;

    let threshold = match cfg.str("threshold") {
        "fit" => ThresholdSpec::fit_polynomial(&data.x, &data.y)?,
        _ => ThresholdSpec::Constant {
            value: cfg.parse("threshold")?,
        },
    };
    let method: Method = cfg.parse("method")?;
    let mut settings = FitSettings::new(method, cfg.parse::<Side>("side")?, cfg.parse("alpha")?);
    settings.epsilon = cfg.auto("epsilon")?;
    settings.gamma = cfg.auto("gamma")?;
    settings.max_dc_iters = cfg.parse("max_dc_iters")?;
    settings.descent_tolerance = cfg.parse("descent_tolerance")?;
    let settings = settings.resolved(&data)?;
    let eps = settings.epsilon_for(&data);
    let grid = if method.is_direct() {
        cfg.auto_list("lambda_grid")?.unwrap_or_else(|| default_lambda_grid(data.n()))
    } else {
        cfg.auto_list("l1_grid")?.unwrap_or_else(default_l1_grid)
    };
    if grid.is_empty() {
        bail!("empty tuning grid");
    }
    let criterion: CvCriterion = cfg.parse("criterion")?;
    let folds: usize = cfg.parse("folds")?;

    let out = cfg.out_dir()?;
    let (policy, penalty, table) = with_jobs(cfg.jobs()?, || -> Result<_> {
        let (penalty, table) = if grid.len() == 1 {
            (grid[0], Vec::new())
        } else {
            let cv = cross_validate(
                &data,
                &grid,
                &threshold,
                settings.alpha,
                eps,
                folds,
                derive_seed(seed, "cv", 0),
                criterion,
                |d, p| fit_policy(d, &threshold, &settings, p),
            )?;
            std::fs::write(out.join("cv.csv"), cv.to_csv())?;
            let table = cv.table.iter().map(|r| (r.penalty, r.mean_risk)).collect();
            (cv.best_penalty, table)
        };
        Ok((fit_policy(&data, &threshold, &settings, penalty)?, penalty, table))
    })?;
    let model = ModelFile::new(
        policy,
        ModelMeta {
            penalty,
            epsilon: eps,
            n_train: data.n(),
            weight_source: source_name(source).into(),
            cv_table: table,
        },
    );
    let model_path = out.join("model.json");
    model.save(&model_path)?;
    cfg.echo()?;
    println!(
        "fitted {} ({}) on {} rows, penalty {penalty}; model written to {}",
        method.name(),
        cfg.str("side"),
        data.n(),
        model_path.display()
    );
    Ok(())
}

pub fn predict(file: Option<&Path>, o: Overrides) -> Result<()> {
    let cfg = RunConfig::build(PREDICT_KEYS, file, o)?;
    let model = ModelFile::load(Path::new(required(&cfg, "model")?))?;
    let x = read_covariates_path(Path::new(required(&cfg, "data")?))?;
    let dim = model.policy.dim();
    if x.ncols() != dim {
        bail!(
            "dimension mismatch: model expects {dim} covariates, data has {}",
            x.ncols()
        );
    }
    let side = model.policy.side();
    let mut s = String::new();
    match side {
        Side::LowerOneSided => s.push_str("lower\n"),
        Side::UpperOneSided => s.push_str("upper\n"),
        Side::TwoSided => s.push_str("lower,upper\n"),
    }
    for row in x.rows_iter() {
        let (lo, hi) = model.policy.interval(row);
        let _ = match side {
            Side::LowerOneSided => writeln!(s, "{lo}"),
            Side::UpperOneSided => writeln!(s, "{hi}"),
            Side::TwoSided => writeln!(s, "{lo},{hi}"),
        };
    }
    let out = cfg.out_dir()?;
    let path = out.join("predictions.csv");
    std::fs::write(&path, s)?;
    cfg.echo()?;
    println!("wrote {} predictions to {}", x.nrows(), path.display());
    Ok(())
}

pub fn evaluate(file: Option<&Path>, o: Overrides) -> Result<()> {
    let cfg = RunConfig::build(EVALUATE_KEYS, file, o)?;
    let model = ModelFile::load(Path::new(required(&cfg, "model")?))?;
    let dgp = load_dgp(&cfg)?;
    let bounds = model.policy.dose_bounds();
    let path = required(&cfg, "data")?.to_string();
    let data = read_dataset_path(Path::new(&path), bounds).with_context(|| format!("reading {path}"))?;
    if data.d() != model.policy.dim() {
        bail!(
            "dimension mismatch: model expects {} covariates, data has {}",
            model.policy.dim(),
            data.d()
        );
    }
    let (data, _) = attach_weights(&cfg, data, dgp.as_ref())?;
    let s = model.policy.threshold().values(&data.x)?;
    let report = empirical_risk(&model.policy, &data, &s, model.policy.alpha(), model.meta.epsilon)?;
    let json = serde_json::to_string_pretty(&report)?;
    let out = cfg.out_dir()?;
    std::fs::write(out.join("risk.json"), &json)?;
    cfg.echo()?;
    println!("{json}");
    Ok(())
}

fn replications_csv(rows: &[BenchmarkRow]) -> String {
    let mut s = String::from("scenario,sigma2,n,d,confounded,method,rep,risk\n");
    for r in rows {
        for (k, v) in r.per_rep.iter().enumerate() {
            let risk = v.map_or("NA".to_string(), |x| x.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{k},{risk}",
                r.scenario,
                r.sigma2,
                r.n,
                r.d,
                r.confounded,
                r.method.name()
            );
        }
    }
    s
}

pub fn benchmark(file: Option<&Path>, o: Overrides) -> Result<()> {
    let cfg = RunConfig::build(BENCHMARK_KEYS, file, o)?;
    let bc = BenchmarkConfig {
        methods: cfg.list("methods")?,
        alpha: cfg.parse("alpha")?,
        epsilon: cfg.auto("epsilon")?,
        lambda_grid: cfg.auto_list("lambda_grid")?,
        l1_grid: cfg.auto_list("l1_grid")?.unwrap_or_else(default_l1_grid),
        folds: cfg.parse("folds")?,
        reps: cfg.parse("reps")?,
        test_n: cfg.parse("test_n")?,
        seed: cfg.seed()?,
        weight_source: cfg.parse("weights")?,
        weight_cap: cfg.parse("weight_cap")?,
        normalize_weights: cfg.parse("normalize_weights")?,
        criterion: cfg.parse("criterion")?,
    };
    if bc.methods.is_empty() {
        bail!("no methods selected");
    }
    let scenarios: Vec<Scenario> = cfg.list("scenarios")?;
    let sigma2: Vec<f64> = cfg.list("sigma2")?;
    let ns: Vec<usize> = cfg.list("n")?;
    let ds: Vec<usize> = cfg.list("d")?;
    let conf: Vec<bool> = cfg.list("confounded")?;
    let out = cfg.out_dir()?;
    let mut rows = Vec::new();
    for &sc in &scenarios {
        for &s2 in &sigma2 {
            for &n in &ns {
                for &d in &ds {
                    for &c in &conf {
                        let spec = ScenarioSpec::new(sc, n, d, s2, c, bc.seed);
                        log::info!("benchmark {sc} sigma2={s2} n={n} d={d} confounded={c}");
                        let r = with_jobs(cfg.jobs()?, || run_benchmark(&spec, &bc))?;
                        rows.extend(r);
                    }
                }
            }
        }
    }
    std::fs::write(out.join("results.csv"), results_csv(&rows))?;
    let table = results_table(&rows);
    std::fs::write(out.join("results.txt"), &table)?;
    std::fs::write(out.join("replications.csv"), replications_csv(&rows))?;
    cfg.echo()?;
    print!("{table}");
    let failed: usize = rows.iter().map(|r| r.n_fail).sum();
    if failed > 0 {
        eprintln!("warning: {failed} replication fits failed; see n_fail in results.csv");
    }
    Ok(())
}
