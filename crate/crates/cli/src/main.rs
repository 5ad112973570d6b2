use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sideslip_core::harness::{
    compare, metrics_table, read_log_file, run_variant, write_log_file, write_metrics_json, write_trace_file,
    RunConfig, RunInput, TruthColumns,
};
use sideslip_core::pipeline::Variant;
use sideslip_core::sim::{generate_scenario, ScenarioKind};

#[derive(Parser)]
#[command(name = "sideslip", version, about = "Adaptive sideslip, bank and bias estimation")]
struct Cli {
    /// Run configuration (TOML). Defaults reproduce the reference tuning.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its sensor log.
    Simulate {
        #[arg(long)]
        scenario: Option<ScenarioKind>,
        #[arg(long)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
        /// Leave the ground-truth columns out of the log.
        #[arg(long)]
        no_truth: bool,
    },
    /// Run one estimator over a log or scenario.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        variant: Option<Variant>,
        /// Per-frame trace CSV.
        #[arg(long, short)]
        out: PathBuf,
        /// Metrics JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run several estimators over the same input and tabulate their metrics.
    Compare {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated variants; all four by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        /// Directory for per-variant traces and metrics.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run an adaptive estimator with the stability diagnostics recorder.
    Diagnose {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "algorithm2")]
        variant: Variant,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Sensor log CSV.
    #[arg(long, conflicts_with_all = ["scenario", "seed"], required_unless_present = "scenario")]
    log: Option<PathBuf>,
    /// Simulate this scenario instead of reading a log.
    #[arg(long, requires = "seed")]
    scenario: Option<ScenarioKind>,
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn load_input(cfg: &RunConfig, args: &InputArgs) -> Result<RunInput> {
    if let Some(path) = &args.log {
        let log = read_log_file(path, Some(cfg.dt), cfg.dt_tolerance)
            .with_context(|| format!("reading log {}", path.display()))?;
        return Ok(log.into());
    }
    let mut spec = cfg.scenario.resolve(args.scenario, cfg.dt)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let sc = generate_scenario(&spec, &cfg.vehicle)?;
    Ok(RunInput::from(&sc))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Command::Simulate {
            scenario,
            seed,
            out,
            no_truth,
        } => {
            let mut spec = cfg.scenario.resolve(scenario, cfg.dt)?;
            spec.seed = seed;
            let sc = generate_scenario(&spec, &cfg.vehicle)?;
            let truth: Vec<TruthColumns> = sc.truth.iter().map(TruthColumns::from).collect();
            write_log_file(&out, &sc.samples, (!no_truth).then_some(truth.as_slice()))?;
            println!(
                "{}: {} samples, peak lateral acceleration {:.3} g -> {}",
                sc.spec.kind,
                sc.samples.len(),
                sc.peak_lateral_g(cfg.vehicle.g),
                out.display()
            );
        }
        Command::Estimate {
            input,
            variant,
            out,
            metrics,
        } => {
            let input = load_input(&cfg, &input)?;
            let res = run_variant(&cfg, variant.unwrap_or(cfg.variant), &input, false)?;
            write_trace_file(&out, &res.frames, input.truth.as_deref(), None)?;
            if let Some(m) = metrics {
                write_metrics_json(m, std::slice::from_ref(&res.metrics))?;
            }
            print!("{}", metrics_table(std::slice::from_ref(&res.metrics)));
        }
        Command::Compare {
            input,
            variants,
            out_dir,
        } => {
            let input = load_input(&cfg, &input)?;
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants
            };
            let results = compare(&cfg, &variants, &input, false)?;
            let metrics: Vec<_> = results.iter().map(|r| r.metrics.clone()).collect();
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for r in &results {
                    let path = dir.join(format!("trace_{}.csv", r.variant));
                    write_trace_file(path, &r.frames, input.truth.as_deref(), None)?;
                }
                write_metrics_json(dir.join("metrics.json"), &metrics)?;
            }
            print!("{}", metrics_table(&metrics));
        }
        Command::Diagnose { input, variant, out } => {
            if !matches!(variant, Variant::Algorithm1 | Variant::Algorithm2) {
                bail!("diagnostics need an adaptive variant, got {variant}");
            }
            let input = load_input(&cfg, &input)?;
            let res = run_variant(&cfg, variant, &input, true)?;
            let diag = res.diagnostics.as_ref().context("diagnostics were not recorded")?;
            write_trace_file(&out, &res.frames, input.truth.as_deref(), Some(diag))?;
            let eta_neg = diag.substeps.iter().filter(|s| s.eta < 0.0).count();
            let eta_cond_fail = diag.steps.iter().filter(|s| !s.eta_cond_ok).count();
            let min_popov = diag.substeps.iter().map(|s| s.popov).fold(0.0, f64::min);
            println!("adaptation steps     {}", diag.steps.len());
            println!("rank-deficient skips {}", diag.skipped.len());
            println!("eta < 0 substeps     {eta_neg} of {}", diag.substeps.len());
            println!("eta condition fails  {eta_cond_fail} of {}", diag.steps.len());
            println!("product sum final    {:.6e}", diag.popov_total());
            println!("product sum minimum  {min_popov:.6e}");
            if input.true_stiffness.is_some() {
                println!("lower bound          {:.6e}", diag.popov_lower_bound());
            } else {
                println!("lower bound          n/a (no true stiffness; w = -eps)");
            }
            print!("{}", metrics_table(std::slice::from_ref(&res.metrics)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
