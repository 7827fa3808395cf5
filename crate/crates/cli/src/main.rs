//! Command-line front end: load a problem file (or a built-in example), run
//! its declared checks, simulate its dynamics, or build extensions, emitting
//! JSON reports and CSV trajectories.
//!
//! Exit codes: 0 all checks matched their expectation, 1 some check did not,
//! 2 input error (missing file, parse or validation failure), 3 runtime
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use varsode_core::corpus;
use varsode_core::error::Error;
use varsode_core::mech::{
    el_sode, integrate, integrate_sode, integrate_vakonomic, nonholonomic_sode, vakonomic_system,
};
use varsode_core::problem::{load_problem, ProblemFile};
use varsode_core::report::{m_trajectory_to_csv, report_to_json, trajectory_to_csv};
use varsode_core::runner::{run_checks, RunReport};

#[derive(Parser)]
#[command(
    name = "varsode",
    version,
    about = "Numerical variationality tests for second-order ODE systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalOpts,
}

#[derive(Args)]
struct GlobalOpts {
    /// Override the condition-residual tolerance from the file.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Override the sample count.
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Override the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Write output to this path instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format.
    #[arg(long, global = true, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run the checks a problem file declares.
    Check { file: PathBuf },

    /// Run a built-in example by name.
    Example { name: String },

    /// Integrate the dynamics a problem file defines and emit the trajectory.
    Simulate {
        file: PathBuf,
        /// Initial state; layout depends on --dynamics (see README).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 5.0)]
        t_final: f64,
        /// Integration step.
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Which dynamics to integrate.
        #[arg(long, default_value = "sode", value_parser = ["sode", "el", "nonholonomic", "vakonomic"])]
        dynamics: String,
        /// Initial multipliers for vakonomic runs.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, num_args = 0..)]
        lambda0: Vec<f64>,
    },

    /// Build the extension a problem file declares and report its
    /// verification sweep.
    Extend {
        file: PathBuf,
        #[arg(long, default_value = "flow", value_parser = ["flow", "closed-form"])]
        method: String,
    },
}

fn apply_overrides(problem: &mut ProblemFile, opts: &GlobalOpts) {
    if let Some(t) = opts.tol {
        problem.cond_tol = t;
    }
    if let Some(s) = opts.samples {
        problem.sampling.samples = s;
    }
    if let Some(s) = opts.seed {
        problem.sampling.seed = s;
    }
}

/// Flat CSV view of the per-check outcomes.
fn report_to_csv(report: &RunReport) -> String {
    let mut out = String::from("check,fibermap,expected,passed,matched_expectation\n");
    for c in &report.checks {
        out.push_str(&format!(
            "{},{},{:?},{},{}\n",
            c.name,
            c.fibermap.clone().unwrap_or_default(),
            c.expected,
            c.passed,
            c.matched_expectation
        ));
    }
    out
}

fn emit_report(opts: &GlobalOpts, report: &RunReport) -> Result<(), Error> {
    let content = if opts.format == "csv" {
        report_to_csv(report)
    } else {
        report_to_json(report)
    };
    write_output(opts, &content)
}

fn write_output(opts: &GlobalOpts, content: &str) -> Result<(), Error> {
    match &opts.out {
        Some(path) => std::fs::write(path, content).map_err(Error::Io),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn exit_for_report(report: &RunReport) -> ExitCode {
    if report.overall_pass {
        ExitCode::from(0)
    } else {
        ExitCode::from(1)
    }
}

fn input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::ProblemFile { .. }
            | Error::Parse(_)
            | Error::Io(_)
            | Error::UnknownExample { .. }
            | Error::UnboundVariable(_)
            | Error::DimensionMismatch { .. }
    )
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Check { file } => {
            let mut problem = load_problem(&file)?;
            apply_overrides(&mut problem, &cli.global);
            let report = run_checks(&problem)?;
            print_summary(&report);
            emit_report(&cli.global, &report)?;
            Ok(exit_for_report(&report))
        }
        Command::Example { name } => {
            let source = corpus::example_source(&name)?;
            let mut problem = varsode_core::problem::load_problem_str(source)?;
            apply_overrides(&mut problem, &cli.global);
            let report = run_checks(&problem)?;
            print_summary(&report);
            emit_report(&cli.global, &report)?;
            Ok(exit_for_report(&report))
        }
        Command::Simulate {
            file,
            x0,
            t_final,
            step,
            dynamics,
            lambda0,
        } => {
            let mut problem = load_problem(&file)?;
            apply_overrides(&mut problem, &cli.global);
            let csv = simulate(&problem, &dynamics, &x0, &lambda0, t_final, step)?;
            write_output(&cli.global, &csv)?;
            Ok(ExitCode::from(0))
        }
        Command::Extend { file, method } => {
            let mut problem = load_problem(&file)?;
            apply_overrides(&mut problem, &cli.global);
            let check = match method.as_str() {
                "flow" => "extend_flow",
                _ => "extend_closed",
            };
            problem.checks = vec![varsode_core::problem::CheckSpec {
                name: check.into(),
                expect: varsode_core::problem::Expectation::Pass,
            }];
            let report = run_checks(&problem)?;
            print_summary(&report);
            emit_report(&cli.global, &report)?;
            Ok(exit_for_report(&report))
        }
    }
}

fn print_summary(report: &RunReport) {
    for c in &report.checks {
        let target = match &c.fibermap {
            Some(f) => format!("{} [{f}]", c.name),
            None => c.name.clone(),
        };
        let verdict = if c.matched_expectation { "ok" } else { "MISMATCH" };
        let raw = if c.passed { "pass" } else { "fail" };
        eprintln!("{target}: {raw} (expected {:?}) -> {verdict}", c.expected);
    }
}

fn simulate(
    problem: &ProblemFile,
    dynamics: &str,
    x0: &[f64],
    lambda0: &[f64],
    t_final: f64,
    step: f64,
) -> Result<String, Error> {
    match dynamics {
        "sode" => {
            let sode = problem.sode.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "sode".into(),
                message: "simulate --dynamics sode needs a [sode] section".into(),
            })?;
            let traj = integrate_sode(sode, x0, 0.0, t_final, step)?;
            let free: Vec<String> = (0..sode.free_count())
                .map(|a| sode.coords()[sode.free_coord(a)].clone())
                .collect();
            Ok(m_trajectory_to_csv(&traj, sode.coords(), &free))
        }
        "el" => {
            let lag = problem.lagrangian.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "lagrangian".into(),
                message: "simulate --dynamics el needs [lagrangian]".into(),
            })?;
            let el = el_sode(lag);
            let traj = integrate(&el, x0, 0.0, t_final, step, None)?;
            Ok(trajectory_to_csv(&traj, lag.n()))
        }
        "nonholonomic" => {
            let lag = problem.lagrangian.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "lagrangian".into(),
                message: "simulate --dynamics nonholonomic needs [lagrangian]".into(),
            })?;
            let lc = problem
                .lin_constraints
                .as_ref()
                .ok_or_else(|| Error::ProblemFile {
                    section: "constraints".into(),
                    message: "simulate --dynamics nonholonomic needs [constraints]".into(),
                })?;
            let nh = nonholonomic_sode(lag, lc);
            let phi = |t: f64, q: &[f64], qd: &[f64]| lc.values(t, q, qd);
            let traj = integrate(&nh, x0, 0.0, t_final, step, Some(&phi))?;
            Ok(trajectory_to_csv(&traj, lag.n()))
        }
        "vakonomic" => {
            let lag = problem.lagrangian.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "lagrangian".into(),
                message: "simulate --dynamics vakonomic needs [lagrangian]".into(),
            })?;
            let lc = problem
                .lin_constraints
                .as_ref()
                .ok_or_else(|| Error::ProblemFile {
                    section: "constraints".into(),
                    message: "vakonomic runs take constraints from [constraints]".into(),
                })?;
            let n = lag.n();
            if x0.len() != 2 * n {
                return Err(Error::DimensionMismatch {
                    expected: 2 * n,
                    got: x0.len(),
                });
            }
            // φ^α = μ^α_i q̇^i + μ^α_0 as expressions over the full space
            use varsode_core::expr::{BinOp, Expr};
            let phis: Vec<Expr> = lc
                .mu
                .iter()
                .zip(&lc.mu0)
                .map(|(row, m0)| {
                    let mut acc = m0.clone();
                    for (i, mi) in row.iter().enumerate() {
                        let qd = Expr::Variable(format!("{}d", lag.coords[i]));
                        acc = Expr::Binary(
                            BinOp::Add,
                            Box::new(acc),
                            Box::new(Expr::Binary(
                                BinOp::Mul,
                                Box::new(mi.clone()),
                                Box::new(qd),
                            )),
                        );
                    }
                    acc
                })
                .collect();
            let system = vakonomic_system(lag, phis)?;
            let traj = integrate_vakonomic(
                &system,
                &x0[..n],
                &x0[n..],
                lambda0,
                0.0,
                t_final,
                step,
            )?;
            Ok(trajectory_to_csv(&traj, n))
        }
        other => Err(Error::Precondition(format!("unknown dynamics `{other}`"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if input_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
