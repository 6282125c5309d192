use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use homog::backward::{martingale_check, solve, DriverMode};
use homog::coefficients::{audit_assumptions, AuditConfig, ModelConfig};
use homog::domain::DomainConfig;
use homog::forward::{
    path_diagnostics, simulate, simulate_averaged, EpsilonTag, PathEnsemble, TimeGrid,
};
use homog::harness::{run_convergence, run_pde_grid, Experiment, ExperimentConfig};
use homog::rng::scalar_mean_stderr;
use homog::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "homog",
    version,
    about = "Averaging experiments for reflected forward-backward systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Epsilon sweep of initial values and terminal functionals.
    Homogenize(SweepArgs),
    /// Value grid u^eps(t, x) against u(t, x).
    PdeGrid(SweepArgs),
    /// Sample the model and potentials against the standing assumptions.
    AuditAssumptions(AuditArgs),
    /// Simulate forward paths and print per-time summaries.
    SimulateForward(ForwardArgs),
    /// Solve the backward inequality on simulated or dumped paths.
    SolveBsvi(SolveArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ForwardArgs {
    /// `interval:LO:HI`, `ball:DIM:RADIUS` or `halfspace:DIM`.
    #[arg(long)]
    domain: String,
    #[arg(long)]
    model: String,
    /// A positive number, or `averaged`.
    #[arg(long)]
    epsilon: String,
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    #[arg(long = "T")]
    t_end: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated start point; defaults to the domain's interior point.
    #[arg(long)]
    x0: Option<String>,
    /// CSV summary path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Binary path dump.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Experiment config supplying domain, model, potentials and regression.
    #[arg(long)]
    config: PathBuf,
    /// A positive number, or `averaged`; defaults to the first config epsilon.
    #[arg(long)]
    epsilon: Option<String>,
    /// Solve on a binary dump instead of simulating from x0.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_domain(arg: &str) -> Result<DomainConfig> {
    let parts: Vec<&str> = arg.split(':').collect();
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Validation(format!("bad number '{s}' in domain '{arg}'")))
    };
    let dim = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Validation(format!("bad dimension '{s}' in domain '{arg}'")))
    };
    match parts.as_slice() {
        ["interval", lo, hi] => Ok(DomainConfig::Interval {
            lo: num(lo)?,
            hi: num(hi)?,
        }),
        ["ball", m, r] => Ok(DomainConfig::Ball {
            dim: dim(m)?,
            radius: num(r)?,
        }),
        ["halfspace", m] => Ok(DomainConfig::Halfspace { dim: dim(m)? }),
        _ => Err(Error::Validation(format!(
            "unknown domain '{arg}' (use interval:LO:HI, ball:DIM:RADIUS or halfspace:DIM)"
        ))),
    }
}

fn parse_epsilon(s: &str) -> Result<Option<f64>> {
    if s == "averaged" {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(e) if e > 0.0 && e.is_finite() => Ok(Some(e)),
        _ => Err(Error::Validation(format!(
            "epsilon must be positive or 'averaged', got '{s}'"
        ))),
    }
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Validation(format!("bad coordinate '{v}'")))
        })
        .collect()
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn homogenize(args: &SweepArgs, grid: bool) -> Result<()> {
    let mut cfg = read_config(&args.config)?;
    if args.csv.is_some() {
        cfg.outputs.csv = args.csv.clone();
    }
    if args.json.is_some() {
        cfg.outputs.json = args.json.clone();
    }
    let csv = if grid {
        run_pde_grid(&cfg)?.to_csv()
    } else {
        let report = run_convergence(&cfg)?;
        for w in &report.audit_warnings {
            eprintln!("warning: assumption check failed: {w}");
        }
        report.to_csv()
    };
    match args.csv {
        Some(_) => Ok(()),
        None => emit(None, &csv),
    }
}

fn audit(args: &AuditArgs) -> Result<()> {
    let cfg = read_config(&args.config)?;
    let exp = Experiment::new(&cfg, &Default::default())?;
    let report = audit_assumptions(
        &exp.model,
        &exp.domain,
        &exp.phi,
        &exp.psi,
        &AuditConfig::new(args.samples, args.seed.unwrap_or(cfg.seed)),
    )?;
    emit(
        None,
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )
}

fn forward(args: &ForwardArgs) -> Result<()> {
    let domain = parse_domain(&args.domain)?.build()?;
    let model = homog::coefficients::ModelRegistry::default()
        .build(&ModelConfig::named(args.model.clone()))?;
    let grid = TimeGrid::new(args.t, args.t_end, args.steps)?;
    let x0 = match &args.x0 {
        Some(s) => parse_point(s)?,
        None => domain.interior_point(),
    };
    let ens = match parse_epsilon(&args.epsilon)? {
        Some(eps) => simulate(&domain, &model, eps, &grid, &x0, args.paths, args.seed)?,
        None => {
            let avg = homog::coefficients::AveragedCoefficients::new(&model)?;
            simulate_averaged(&domain, &avg, &grid, &x0, args.paths, args.seed)?
        }
    };
    if let Some(p) = &args.dump {
        ens.write_dump(p)?;
    }
    let diag = path_diagnostics(&ens, &domain, None);
    eprintln!(
        "reflection fraction {}, mean |K|_T {}, invariants {}",
        diag.reflection_fraction,
        diag.mean_k_var,
        if ens.invariants.holds() {
            "hold"
        } else {
            "VIOLATED"
        }
    );
    emit(args.output.as_deref(), &forward_csv(&ens))
}

fn forward_csv(ens: &PathEnsemble) -> String {
    let mut out = String::from("step,t");
    for k in 0..ens.m {
        let _ = write!(out, ",mean_x_{k},stderr_x_{k}");
    }
    out.push_str(",mean_k_var\n");
    for i in 0..=ens.n_steps() {
        let _ = write!(out, "{},{}", i, ens.grid.time(i));
        for k in 0..ens.m {
            let (mu, se) = scalar_mean_stderr((0..ens.n_paths).map(|p| ens.x(p, i)[k]));
            let _ = write!(out, ",{mu},{se}");
        }
        let kv = (0..ens.n_paths).map(|p| ens.k_var(p, i)).sum::<f64>() / ens.n_paths as f64;
        let _ = writeln!(out, ",{kv}");
    }
    out
}

fn solve_bsvi(args: &SolveArgs) -> Result<()> {
    let cfg = read_config(&args.config)?;
    let exp = Experiment::new(&cfg, &Default::default())?;
    let eps = match &args.epsilon {
        Some(s) => parse_epsilon(s)?,
        None => Some(cfg.epsilons[0]),
    };
    let tag = eps.map_or(EpsilonTag::Averaged, EpsilonTag::Epsilon);
    let ens = match &args.dump {
        Some(p) => PathEnsemble::read_dump(p, cfg.t, tag, cfg.seed)?,
        None => {
            let x0 = cfg
                .x0
                .clone()
                .ok_or_else(|| Error::Validation("config needs x0 when no dump is given".into()))?;
            let grid = cfg.step_rule.grid(
                cfg.t,
                cfg.t_end,
                eps.unwrap_or(cfg.epsilons[0]),
                exp.model.period,
            )?;
            match eps {
                Some(e) => simulate(
                    &exp.domain,
                    &exp.model,
                    e,
                    &grid,
                    &x0,
                    cfg.n_paths,
                    cfg.seed,
                )?,
                None => simulate_averaged(
                    &exp.domain,
                    &exp.averaged,
                    &grid,
                    &x0,
                    cfg.n_paths,
                    cfg.seed,
                )?,
            }
        }
    };
    let mode = match eps {
        Some(_) => DriverMode::FastTime,
        None => DriverMode::Averaged(&exp.averaged),
    };
    let sol = solve(
        &ens,
        &exp.domain,
        &exp.model,
        &exp.phi,
        &exp.psi,
        &cfg.regression,
        mode,
        false,
    )?;
    let out = json!({
        "epsilon": eps,
        "n_paths": sol.n_paths,
        "n_steps": sol.grid.n_steps,
        "y_start": sol.y_start,
        "y_start_stderr": sol.y_start_stderr,
        "martingale": martingale_check(&sol),
        "moments": sol.moments,
        "split": sol.split,
    });
    emit(
        args.output.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&out)?),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Homogenize(a) => homogenize(a, false),
        Command::PdeGrid(a) => homogenize(a, true),
        Command::AuditAssumptions(a) => audit(a),
        Command::SimulateForward(a) => forward(a),
        Command::SolveBsvi(a) => solve_bsvi(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
