//! `ricci-monotone`: run flow scenarios, verify monotone quantities in a
//! trace, and check the eigenvalue rate formula.
//!
//! Exit codes: 0 success, 1 a verdict failed, 2 bad input (scenario, trace or
//! arguments), 3 numerical abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use ricci_monotone::monotone::{
    self, check_quantity, default_tolerance, is_primary, KindOutcome, MonotoneError, QuantityKind,
};
use ricci_monotone::scenario::{simulate, Scenario, SimulateError};
use ricci_monotone::surface_flow::FlowError;
use ricci_monotone::trace::FlowTrace;

#[derive(Parser, Debug)]
#[command(name = "ricci-monotone", version, about = "Normalized Ricci flow scenarios and monotone eigenvalue quantities")]
struct Cli {
    /// Worker threads for the numeric kernels (also read from RM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write its trace CSV.
    Simulate {
        scenario: PathBuf,
        /// Trace output path (overrides the scenario's `trace` key).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check monotone quantities in a trace CSV.
    Verify {
        trace: PathBuf,
        /// Comma-separated kinds: Q1plus, Q1minus, Q2plus, Q2minus.
        #[arg(long, value_delimiter = ',', default_value = "Q1plus,Q1minus,Q2plus,Q2minus")]
        quantities: Vec<String>,
        /// Verdict tolerance; defaults to 1e-6 + 10 h² + 10 Δt from the trace.
        #[arg(long)]
        tol: Option<f64>,
        /// Report CSV path; defaults to `<trace>.report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finite-difference eigenvalue rates with the rate formula.
    RateCheck {
        scenario: PathBuf,
        /// Branch to check, counting from 1 (overrides `rate_branch`).
        #[arg(long)]
        branch: Option<usize>,
        /// Also write the table as CSV (overrides the scenario's `report` key).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("RM_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                CliError::Input(format!("RM_THREADS must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Input("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    Scenario::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_simulate(scenario_path: &Path, out: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let scenario = load_scenario(scenario_path)?;
    let out = out
        .or_else(|| scenario.trace_path.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", scenario.id)));
    let trace = match simulate(&scenario) {
        Ok(trace) => trace,
        Err(SimulateError::Scenario(e)) => return Err(CliError::Input(e.to_string())),
        Err(SimulateError::Run(e)) => {
            if let Some(partial) = &e.partial {
                write_file(&out, &partial.to_csv())?;
                eprintln!("partial trace written to {}", out.display());
            }
            return Err(CliError::Numerical(e.to_string()));
        }
    };
    write_file(&out, &trace.to_csv())?;

    let first = &trace.rows[0];
    let last = trace.rows.last().unwrap();
    let chi = trace.meta.chi.map_or("n/a".to_string(), |c| c.to_string());
    println!(
        "t_end={} r0={} chi={} lambda1(0)={} lambda1(t_end)={}",
        last.t, trace.meta.r0, chi, first.lambda[0], last.lambda[0]
    );
    if let Some(reason) = &trace.meta.truncated {
        println!("truncated: {reason}");
    }
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(
    trace_path: &Path,
    quantities: &[String],
    tol: Option<f64>,
    out: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    let kinds = quantities
        .iter()
        .map(|q| q.parse::<QuantityKind>().map_err(CliError::Input))
        .collect::<Result<Vec<_>, _>>()?;
    let trace = FlowTrace::read_csv(trace_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", trace_path.display())))?;
    let tol = tol.unwrap_or_else(|| default_tolerance(trace.meta.h, trace.meta.dt));
    if !(tol >= 0.0) {
        return Err(CliError::Input("tolerance must be nonnegative".into()));
    }

    let mut outcomes = Vec::new();
    for kind in kinds {
        let outcome = check_quantity(&trace, kind, tol).map_err(|e| match e {
            MonotoneError::Bound(_) => CliError::Input(format!("{}: {e}", trace_path.display())),
            other => CliError::Numerical(other.to_string()),
        })?;
        outcomes.push((kind, outcome));
    }
    let reports: Vec<_> = outcomes
        .iter()
        .flat_map(|(_, o)| match o {
            KindOutcome::Reports(r) => r.clone(),
            KindOutcome::Skipped(_) => Vec::new(),
        })
        .collect();

    let out = out.unwrap_or_else(|| trace_path.with_extension("report.csv"));
    write_file(&out, &monotone::reports_csv(&reports))?;
    print!("{}", monotone::summary(&outcomes));
    println!("report written to {}", out.display());

    let failed = reports.iter().any(|r| is_primary(r) && !r.pass);
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_rate_check(
    scenario_path: &Path,
    branch: Option<usize>,
    out: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    let scenario = load_scenario(scenario_path)?;
    if !scenario.geometry.is_surface() {
        return Err(CliError::Input(
            "rate-check needs a surface geometry".into(),
        ));
    }
    let branch = match branch {
        Some(0) => return Err(CliError::Input("--branch counts from 1".into())),
        Some(b) => b - 1,
        None => scenario.rate_branch,
    };
    let out = out.or_else(|| scenario.report_path.clone());
    let (ops, u0) = scenario.surface().map_err(|e| CliError::Input(e.to_string()))?;
    let report = monotone::rate_check(&ops, u0, &scenario.flow_config(), branch).map_err(|e| match e {
        MonotoneError::InvalidInput(_) | MonotoneError::Flow(FlowError::InvalidConfig(_)) => {
            CliError::Input(e.to_string())
        }
        other => CliError::Numerical(other.to_string()),
    })?;

    let table = report.to_table();
    print!("{table}");
    if let Some(out) = out {
        write_file(&out, &table)?;
    }
    if report.compared() == 0 {
        println!(
            "warning: all {} rows skipped; branch {} is not a simple eigenvalue",
            report.rows.len(),
            branch + 1
        );
        return Ok(ExitCode::SUCCESS);
    }
    let skipped = report.rows.len() - report.compared();
    println!(
        "branch {}: max relative gap {:.3e} over {} rows ({} skipped) -> {}",
        branch + 1,
        report.max_gap,
        report.compared(),
        skipped,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Simulate { scenario, out } => cmd_simulate(&scenario, out),
        Command::Verify {
            trace,
            quantities,
            tol,
            out,
        } => cmd_verify(&trace, &quantities, tol, out),
        Command::RateCheck {
            scenario,
            branch,
            out,
        } => cmd_rate_check(&scenario, branch, out),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
