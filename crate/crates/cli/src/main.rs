use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ddpca::config::{parse_config, ExperimentConfig};
use ddpca::experiments::{self, ModelInstance};
use ddpca::{output, Error};

/// Environment variable consulted for the seed when neither the flag nor the config sets one.
const SEED_ENV: &str = "DDPCA_SEED";

#[derive(Parser)]
#[command(name = "ddpca", version, about = "PCA error bounds and Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the SE bound of the configured model at each alpha.
    Bound(RunArgs),
    /// Mean and max SE against the bound over the alpha grid.
    BoundTightness(RunArgs),
    /// Success probability over the (r or n, alpha) grid.
    PhaseTransition(RunArgs),
    /// Medians of the five deviation terms against their bounds.
    Concentration(RunArgs),
    /// Success counts of the threshold and eigen-gap rank estimators.
    RankEstimation(RunArgs),
    /// PCA under noise concentrated on one direction outside the signal space.
    Adversarial(RunArgs),
    /// Staged refinement recursion.
    Refine(RunArgs),
    /// Bound tightness with zero-filled missing entries.
    Missing(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Config file, or the name of a shipped preset (fig1a, fig2d, ...).
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Never changes the output.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Constant in the concentration terms of the bounds.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated sample sizes replacing the config's alpha grid.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<usize>>,
}

enum Failure {
    Config(String),
    Infeasible(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(_) | Error::CorollaryInapplicable(_) => Failure::Infeasible(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn resolve(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = parse_config(&args.config)?;
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| Failure::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
        ),
        Err(_) => None,
    };
    cfg.seed = Some(args.seed.or(cfg.seed).or(env_seed).unwrap_or(0));
    if let Some(c) = args.c {
        cfg.c = c;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(a) = &args.alpha {
        cfg.alpha_grid = a.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bound_text(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let mut text = String::new();
    for row in 0..cfg.rows().len() {
        let inst = ModelInstance::build(cfg, row)?;
        for &alpha in &cfg.alpha_grid {
            let inp = inst.bound_inputs(cfg, alpha)?;
            let report = inst.bound(cfg, alpha)?;
            if !text.is_empty() {
                text.push('\n');
            }
            let s = &inp.spectra;
            text.push_str(&format!(
                "n={}\nr={}\nr_v={}\nalpha={}\nq={}\nb={}\nc={}\nf={}\nlambda_minus={}\nlambda_v_plus={}\nlambda_vpp_perp={}\n",
                inp.n,
                inp.r,
                inp.r_v,
                alpha,
                output::float(inp.q),
                output::float(inp.b),
                output::float(inp.c),
                output::float(s.f),
                output::float(s.lambda_minus),
                output::float(s.lambda_v_plus),
                output::float(s.lambda_vpp_perp),
            ));
            text.push_str(&output::bound_report_lines(&report));
        }
    }
    Ok(text)
}

fn run(name: &str, cmd: &Command, args: &RunArgs) -> Result<(), Failure> {
    let cfg = resolve(args)?;
    let seed = cfg.master_seed();
    eprintln!("# resolved config\n{}", cfg.describe().trim_end());
    eprintln!("# seed = {seed}");
    let start = Instant::now();
    let text = experiments::with_workers(args.workers, || -> Result<String, Failure> {
        Ok(match cmd {
            Command::Bound(_) => bound_text(&cfg)?,
            Command::BoundTightness(_) => output::bound_tightness_csv(&experiments::bound_tightness(&cfg)?),
            Command::PhaseTransition(_) => output::phase_csv(&experiments::phase_transition(&cfg)?),
            Command::Concentration(_) => output::concentration_csv(&experiments::concentration_check(&cfg)?),
            Command::RankEstimation(_) => output::rank_csv(&experiments::rank_estimation(&cfg)?),
            Command::Adversarial(_) => output::adversarial_csv(&experiments::adversarial_experiment(&cfg)?),
            Command::Refine(_) => output::refinement_csv(&experiments::refinement_experiment(&cfg)?),
            Command::Missing(_) => output::bound_tightness_csv(&experiments::missing_data_experiment(&cfg)?),
        })
    })??;
    match &args.out {
        Some(path) => std::fs::write(path, &text)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::Config(format!("cannot write output: {e}")))?;
        }
    }
    eprintln!(
        "# {name}: grid {} x {}, trials {}, wall {:.2}s, seed {seed}",
        cfg.rows().len(),
        cfg.alpha_grid.len(),
        cfg.trials,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (name, args) = match &cli.command {
        Command::Bound(a) => ("bound", a),
        Command::BoundTightness(a) => ("bound-tightness", a),
        Command::PhaseTransition(a) => ("phase-transition", a),
        Command::Concentration(a) => ("concentration", a),
        Command::RankEstimation(a) => ("rank-estimation", a),
        Command::Adversarial(a) => ("adversarial", a),
        Command::Refine(a) => ("refine", a),
        Command::Missing(a) => ("missing", a),
    };
    match run(name, &cli.command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Infeasible(msg)) => {
            eprintln!("infeasible: {msg}");
            ExitCode::from(2)
        }
    }
}
