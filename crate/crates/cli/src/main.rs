use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spinboson_nrg::engine::{EngineSettings, SignRule};
use spinboson_nrg::solver::AlphaMax;
use spinboson_nrg::sweep::{format_g12, render, render_annotated, Metadata, PRESET_NOTE};
use spinboson_nrg::{
    find_alpha_max, run_point, run_sweep, verify, Error, Format, NrgConfig, SpinBosonPoint,
    SweepSpec,
};

/// Qubit observables and entanglement entropy of the ohmic spin-boson model via NRG.
#[derive(Parser, Debug)]
#[command(name = "sbnrg", version)]
struct Cli {
    #[command(flatten)]
    solver: SolverArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Discretization parameter.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// States kept per iteration (total over sectors).
    #[arg(long, global = true)]
    n_keep: Option<usize>,
    /// Maximum iteration.
    #[arg(long, global = true)]
    n_max: Option<usize>,
    /// Stop once omega_N < eta * Delta_r.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Lambda = 1.5 with 1200 kept states.
    #[arg(long, global = true)]
    paper_fidelity: bool,
    /// Use the bare discretized band couplings.
    #[arg(long, global = true)]
    no_discretization_correction: bool,
    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for independent grid points.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[arg(long, global = true, hide = true)]
    sabotage_sign_rule: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a single parameter point.
    Point {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        eps_over_delta: f64,
        #[arg(long, default_value_t = 0.04)]
        delta_ratio: f64,
    },
    /// Solve a grid; each axis is a list `a,b,c` or a range `start:stop:step`.
    Sweep {
        #[arg(long)]
        alpha: String,
        #[arg(long, default_value = "0")]
        eps_over_delta: String,
        #[arg(long, default_value = "0.04")]
        delta_ratio: String,
    },
    /// Run a figure preset grid.
    Preset {
        #[arg(value_parser = ["fig1", "fig2", "fig3"])]
        name: String,
    },
    /// Locate the entanglement maximum in alpha for epsilon > 0.
    AlphaMax {
        #[arg(long)]
        eps_over_delta: f64,
        #[arg(long, default_value_t = 0.04)]
        delta_ratio: f64,
    },
    /// Run the oracle, Hellmann-Feynman and invariant suites.
    Verify,
}

const VERIFY_FAILED: u8 = 2;

fn effective_config(args: &SolverArgs) -> Result<NrgConfig, Error> {
    let mut cfg = NrgConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    if args.paper_fidelity {
        let p = NrgConfig::paper_fidelity();
        cfg.lambda = p.lambda;
        cfg.n_keep = p.n_keep;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.n_keep {
        cfg.n_keep = v;
    }
    if let Some(v) = args.n_max {
        cfg.n_max = v;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if args.no_discretization_correction {
        cfg.discretization_correction = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(args: &SolverArgs, text: &str) -> Result<(), Error> {
    match &args.output {
        Some(path) => Ok(fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct AlphaMaxOutput<'a> {
    metadata: Metadata,
    eps_over_delta: f64,
    delta_ratio: f64,
    result: &'a AlphaMax,
}

fn execute(cli: &Cli) -> Result<u8, Error> {
    let args = &cli.solver;
    let cfg = effective_config(args)?;
    let format: Format = args.format.parse()?;
    log::info!("effective configuration: {cfg:?}");

    match &cli.command {
        Command::Point {
            alpha,
            eps_over_delta,
            delta_ratio,
        } => {
            let p = SpinBosonPoint::new(*alpha, *eps_over_delta, *delta_ratio)?;
            let rec = run_point(&p, &cfg)?;
            if !rec.converged {
                log::warn!("point did not converge within n_max = {}", cfg.n_max);
            }
            emit(args, &render(&[rec], &cfg, format)?)?;
        }
        Command::Sweep {
            alpha,
            eps_over_delta,
            delta_ratio,
        } => {
            let spec = SweepSpec::parse(alpha, eps_over_delta, delta_ratio)?;
            let rows = run_sweep(&spec, &cfg, args.jobs)?;
            emit(args, &render(&rows, &cfg, format)?)?;
        }
        Command::Preset { name } => {
            let spec = SweepSpec::preset(name)?;
            log::info!("preset {name}: {} points", spec.len());
            eprintln!("note: {PRESET_NOTE}");
            let rows = run_sweep(&spec, &cfg, args.jobs)?;
            emit(
                args,
                &render_annotated(&rows, &cfg, format, Some(PRESET_NOTE))?,
            )?;
        }
        Command::AlphaMax {
            eps_over_delta,
            delta_ratio,
        } => {
            let m = find_alpha_max(*eps_over_delta, *delta_ratio, &cfg)?;
            let text = match format {
                Format::Json => {
                    let out = AlphaMaxOutput {
                        metadata: Metadata::new(&cfg),
                        eps_over_delta: *eps_over_delta,
                        delta_ratio: *delta_ratio,
                        result: &m,
                    };
                    serde_json::to_string_pretty(&out).map_err(Error::Json)? + "\n"
                }
                Format::Csv => format!(
                    "eps_over_delta,delta_ratio,alpha_m,entropy_max,bracket\n{},{},{},{},{}\n",
                    format_g12(*eps_over_delta),
                    format_g12(*delta_ratio),
                    format_g12(m.alpha_m),
                    format_g12(m.entropy_max),
                    format_g12(m.bracket)
                ),
            };
            emit(args, &text)?;
        }
        Command::Verify => {
            let lambdas = match args.lambda.or(args.paper_fidelity.then_some(cfg.lambda)) {
                Some(l) => vec![l],
                None => vec![1.5, 2.0],
            };
            let mut settings = EngineSettings::new(cfg.lambda);
            if args.sabotage_sign_rule {
                settings.sign_rule = SignRule::Ignore;
            }
            let report = verify::verify(&lambdas, settings)?;
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&report).map_err(Error::Json)? + "\n",
                Format::Csv => report
                    .suites
                    .iter()
                    .map(|s| {
                        let tag = if s.passed { "PASS" } else { "FAIL" };
                        format!("[{tag}] {} (lambda = {}): {}\n", s.name, s.lambda, s.detail)
                    })
                    .collect(),
            };
            emit(args, &text)?;
            if !report.passed() {
                return Ok(VERIFY_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.solver.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
