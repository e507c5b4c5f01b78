use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use causal_lift::causality::{assign_causality, classify_observables, CausalityReport};
use causal_lift::eval::{emit_outputs, run_experiment, ConfigError, ExperimentConfig};
use causal_lift::netmodel::{parse_model, NetworkModel};
use causal_lift::par::Execution;
use causal_lift::simulate::{generate_signal, integrate, Dynamics, IntegrateOptions, NetworkOde, SignalSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURES: u8 = 3;

#[derive(Parser)]
#[command(name = "causal-lift", version, about = "Lifting linearization with causal observables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write report files.
    Run {
        config: PathBuf,
        /// Base seed; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Output directory (default: the config's `out`, else `results/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep only this method; repeatable.
        #[arg(long = "method")]
        methods: Vec<String>,
        /// Run trials on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Assign causality and classify auxiliary variables.
    Analyze {
        model: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Simulate a model and write its trajectory as CSV.
    Simulate {
        model: PathBuf,
        /// `kind,key=value,...`, e.g. `square,amplitude=1,period=4`.
        #[arg(long)]
        signal: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Initial state, comma separated (default: zeros).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        substeps: usize,
    },
}

/// Errors that map to the config exit code.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<E: Into<anyhow::Error>>(e: E) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, trials, out, methods, sequential } => {
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            run(&config, seed, trials, out, &methods, exec)
        }
        Command::Analyze { model, json } => analyze(&model, json).map(|()| 0),
        Command::Simulate { model, signal, out, t_final, dt, seed, x0, substeps } => {
            simulate(&model, &signal, &out, t_final, dt, seed, &x0, substeps).map(|()| 0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(
    path: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
    out: Option<PathBuf>,
    methods: &[String],
    exec: Execution,
) -> anyhow::Result<u8> {
    let mut cfg = ExperimentConfig::load(path).map_err(usage)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.seeds = None;
    }
    if let Some(t) = trials {
        cfg.trials = t;
        cfg.seeds = None;
    }
    if !methods.is_empty() {
        cfg.select_methods(methods).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| Path::new("results").join(&cfg.name));
    let report = run_experiment(&cfg, exec).map_err(|e| match e {
        ConfigError::Io { .. } | ConfigError::Parse(_) | ConfigError::Invalid(_) | ConfigError::Model(_) | ConfigError::Causality(_) => usage(e),
    })?;
    emit_outputs(&report, &dir).with_context(|| format!("writing results to {}", dir.display()))?;

    println!("{:<22} {:>6} {:>12} {:>12} {:>12} {:>12} {:>7}", "method", "order", "mean", "stderr", "median", "p90", "failed");
    for m in &report.methods {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
        let q = |v: f64| if v.is_finite() { format!("{v:.4e}") } else { "inf".into() };
        println!(
            "{:<22} {:>6} {:>12} {:>12} {:>12} {:>12} {:>7}",
            m.name,
            m.order.map_or("-".into(), |o| o.to_string()),
            opt(m.summary.mean),
            opt(m.summary.stderr),
            q(m.summary.median),
            q(m.summary.p90),
            m.summary.failed
        );
    }
    println!("results written to {} ({:.1} s)", dir.display(), report.run.runtime_seconds);
    Ok(if report.failures() > 0 { EXIT_FAILURES } else { 0 })
}

fn load_model(path: &Path) -> anyhow::Result<NetworkModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    parse_model(&text).with_context(|| path.display().to_string()).map_err(usage)
}

fn analyze(path: &Path, json: bool) -> anyhow::Result<()> {
    let model = load_model(path)?;
    let assignment = assign_causality(&model).map_err(usage)?;
    let plan = classify_observables(&model, &assignment);
    let report = CausalityReport::new(&model, &assignment, &plan);
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(())
}

/// Parse `kind,key=value,...` into a signal spec.
fn parse_signal(text: &str) -> anyhow::Result<SignalSpec> {
    let mut parts = text.split(',').map(str::trim);
    let kind = parts.next().filter(|k| !k.is_empty()).context("empty signal")?;
    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), kind.into());
    for p in parts {
        let Some((k, v)) = p.split_once('=') else { bail!("expected key=value in signal, found `{p}`") };
        let v: f64 = v.trim().parse().with_context(|| format!("signal parameter `{k}`"))?;
        obj.insert(k.trim().into(), v.into());
    }
    let spec: SignalSpec = serde_json::from_value(obj.into()).with_context(|| format!("signal `{text}`"))?;
    spec.validate().map_err(anyhow::Error::msg)?;
    Ok(spec)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    path: &Path,
    signal: &str,
    out: &Path,
    t_final: f64,
    dt: f64,
    seed: u64,
    x0: &[f64],
    substeps: usize,
) -> anyhow::Result<()> {
    let model = load_model(path)?;
    let spec = parse_signal(signal).map_err(usage)?;
    let ode = NetworkOde::from_model(&model, false).map_err(usage)?;
    let x0 = if x0.is_empty() { vec![0.0; ode.state_dim()] } else { x0.to_vec() };
    if x0.len() != ode.state_dim() {
        return Err(usage(anyhow::anyhow!("--x0 has {} values, model has {} states", x0.len(), ode.state_dim())));
    }
    let u = generate_signal(&spec, seed, t_final, ode.input_dim());
    let traj = integrate(&ode, &x0, &u, t_final, dt, IntegrateOptions { substeps })?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    traj.write_csv(BufWriter::new(file)).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("{} steps written to {}", traj.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_strings() {
        assert_eq!(
            parse_signal("square,amplitude=1,period=4").unwrap(),
            SignalSpec::Square { amplitude: 1.0, period: 4.0 }
        );
        assert_eq!(parse_signal("zero").unwrap(), SignalSpec::Zero);
        assert!(parse_signal("square,amplitude=1").is_err());
        assert!(parse_signal("square,amplitude=1,period=-1").is_err());
        assert!(parse_signal("chirp").is_err());
    }
}
