use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "pdi", version, about = "Learn individualized probability dose intervals")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw training and test samples from a simulation scenario.
    Simulate(SimulateArgs),
    /// Fit a dose-interval policy with cross-validated tuning.
    Fit(FitArgs),
    /// Predict interval bounds for new covariate rows.
    Predict(PredictArgs),
    /// Weighted empirical risk of a fitted policy on labelled data.
    Evaluate(EvaluateArgs),
    /// Replicated simulation benchmark.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Any config key, repeatable: `--set alpha=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> anyhow::Result<Vec<(String, String)>> {
        let mut o = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(s) = self.seed {
            o.push(("seed".into(), s.to_string()));
        }
        if let Some(p) = &self.out {
            o.push(("out".into(), p.display().to_string()));
        }
        if let Some(j) = self.jobs {
            o.push(("jobs".into(), j.to_string()));
        }
        Ok(o)
    }
}

fn push(o: &mut Vec<(String, String)>, key: &str, v: &Option<String>) {
    if let Some(v) = v {
        o.push((key.to_string(), v.clone()));
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// s1, s2 or plateau.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    sigma2: Option<String>,
    #[arg(long)]
    confounded: Option<String>,
    #[arg(long)]
    test_n: Option<String>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Training CSV with columns x1..xd, a, y and optionally w.
    #[arg(long)]
    data: Option<String>,
    /// Simulation sidecar, needed for `--weights true`.
    #[arg(long)]
    dgp: Option<String>,
    /// lo-linear, lo-gaussian or indirect-logistic.
    #[arg(long)]
    method: Option<String>,
    /// lower, upper or two-sided.
    #[arg(long)]
    side: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// fit, true or file.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    /// Comma-separated tuning grid, or `auto`.
    #[arg(long)]
    lambda_grid: Option<String>,
    /// `fit` or a constant.
    #[arg(long)]
    threshold: Option<String>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    /// CSV with covariate columns x1..xd.
    #[arg(long)]
    data: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    dgp: Option<String>,
    #[arg(long)]
    weights: Option<String>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated scenarios.
    #[arg(long)]
    scenarios: Option<String>,
    #[arg(long)]
    sigma2: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    confounded: Option<String>,
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    test_n: Option<String>,
    #[arg(long)]
    weights: Option<String>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let mut o = a.common.overrides()?;
            push(&mut o, "scenario", &a.scenario);
            push(&mut o, "n", &a.n);
            push(&mut o, "d", &a.d);
            push(&mut o, "sigma2", &a.sigma2);
            push(&mut o, "confounded", &a.confounded);
            push(&mut o, "test_n", &a.test_n);
            commands::simulate(a.common.config.as_deref(), o)
        }
        Command::Fit(a) => {
            let mut o = a.common.overrides()?;
            push(&mut o, "data", &a.data);
            push(&mut o, "dgp", &a.dgp);
            push(&mut o, "method", &a.method);
            push(&mut o, "side", &a.side);
            push(&mut o, "alpha", &a.alpha);
            push(&mut o, "weights", &a.weights);
            push(&mut o, "epsilon", &a.epsilon);
            push(&mut o, "lambda_grid", &a.lambda_grid);
            push(&mut o, "threshold", &a.threshold);
            commands::fit(a.common.config.as_deref(), o)
        }
        Command::Predict(a) => {
            let mut o = a.common.overrides()?;
            push(&mut o, "model", &a.model);
            push(&mut o, "data", &a.data);
            commands::predict(a.common.config.as_deref(), o)
        }
        Command::Evaluate(a) => {
            let mut o = a.common.overrides()?;
            push(&mut o, "model", &a.model);
            push(&mut o, "data", &a.data);
            push(&mut o, "dgp", &a.dgp);
            push(&mut o, "weights", &a.weights);
            commands::evaluate(a.common.config.as_deref(), o)
        }
        Command::Benchmark(a) => {
            let mut o = a.common.overrides()?;
            push(&mut o, "scenarios", &a.scenarios);
            push(&mut o, "sigma2", &a.sigma2);
            push(&mut o, "n", &a.n);
            push(&mut o, "d", &a.d);
            push(&mut o, "confounded", &a.confounded);
            push(&mut o, "methods", &a.methods);
            push(&mut o, "reps", &a.reps);
            push(&mut o, "test_n", &a.test_n);
            push(&mut o, "weights", &a.weights);
            commands::benchmark(a.common.config.as_deref(), o)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
