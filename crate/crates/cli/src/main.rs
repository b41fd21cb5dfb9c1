use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fundsim_core::analytics::{build_counterexample, counterexample_limit_r};
use fundsim_core::run::{check_scenario, run_scenario, write_conditions, write_outputs, RunOptions, RunSummary};
use fundsim_core::{Error, Scenario};

const EXIT_VALIDATION: u8 = 2;
const EXIT_VIOLATED: u8 = 3;

#[derive(Parser)]
#[command(name = "fundsim", version, about = "Fundamental vs. market portfolio expectations under mean reversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run checks and the expectation engine on a scenario.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build and evaluate the two-stock underperformance construction.
    Counterexample {
        #[arg(long, allow_negative_numbers = true)]
        s: f64,
        #[arg(long = "m-up", allow_negative_numbers = true)]
        m_up: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        a: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the requested conditions without simulating.
    Check {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn threads_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var("FUNDSIM_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => {
            let t: usize = v
                .trim()
                .parse()
                .with_context(|| format!("FUNDSIM_THREADS = {v:?} is not a positive integer"))?;
            anyhow::ensure!(t >= 1, "FUNDSIM_THREADS must be at least 1");
            Ok(Some(t))
        }
    }
}

fn load(path: &PathBuf) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Scenario::from_json(&text)?)
}

fn print_summary(summary: &RunSummary) {
    println!("{:>12} {:>16} {:>12} {:>16} {:>16}", "t", "estimate", "stderr", "ci_low", "ci_high");
    for e in &summary.report.entries {
        println!(
            "{:>12.6} {:>16.9e} {:>12.3e} {:>16.9e} {:>16.9e}",
            e.t, e.estimate, e.stderr, e.ci_low, e.ci_high
        );
    }
    for v in &summary.verdicts {
        println!("{}: {:?}", v.theorem.as_str(), v.verdict);
        for p in &v.predictions {
            println!(
                "  step {} {:?}: estimate {:.9e}, bound {:.9e}, {}",
                p.k,
                p.direction,
                p.estimate,
                p.bound,
                if p.holds { "holds" } else { "fails" }
            );
        }
    }
    for set in &summary.conditions {
        for w in &set.warnings {
            eprintln!("warning ({}): {w}", set.theorem.as_str());
        }
    }
}

fn exit_for(summary: &RunSummary) -> ExitCode {
    if summary.any_violated() {
        ExitCode::from(EXIT_VIOLATED)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    let threads = threads_from_env()?;
    match cli.command {
        Command::Run {
            scenario,
            out,
            paths,
            seed,
        } => {
            let s = load(&scenario)?;
            let summary = run_scenario(&s, RunOptions { paths, seed, threads })?;
            write_outputs(&summary, &out)?;
            print_summary(&summary);
            Ok(exit_for(&summary))
        }
        Command::Counterexample { s, m_up, a, out } => {
            let r = counterexample_limit_r(s)?;
            let scenario = Scenario::counterexample(s, m_up, a)?;
            let kernel = scenario.processes[0].as_lattice().expect("lattice");
            let m_up = kernel.prob(1, 2).unwrap_or(0.0);
            let a = scenario.fundamentals.stock(1)[0];
            println!("s        = {s}");
            println!("r_limit  = {r:.16}");
            println!("M(s,2s)  = {m_up:.16}");
            println!("M(s,0)   = {:.16}", 1.0 - m_up);
            println!("A        = {a}");
            if let Ok(built) = build_counterexample(s) {
                if built.a == a && built.m_up == m_up {
                    println!("margin   = {:.6e}", built.margin()?);
                }
            }
            let summary = run_scenario(&scenario, RunOptions { threads, ..RunOptions::default() })?;
            println!("E log V_pi2(1)/V_pi0(1) = {:.12e}", summary.report.final_estimate());
            print_summary(&summary);
            if let Some(out) = out {
                write_outputs(&summary, &out)?;
            }
            Ok(exit_for(&summary))
        }
        Command::Check { scenario, out } => {
            let s = load(&scenario)?;
            let sets = check_scenario(&s)?;
            write_conditions(&sets, &out)?;
            for set in &sets {
                println!("{}: {}", set.theorem.as_str(), if set.applicable { "pass" } else { "fail" });
                for report in &set.reports {
                    for c in report.conditions.iter().filter(|c| !c.passed) {
                        let scope = report.scope.as_deref().unwrap_or("");
                        println!("  {} failed {scope}", c.label);
                        for w in &c.witnesses {
                            println!("    {}", w.note);
                        }
                    }
                }
                for w in &set.warnings {
                    eprintln!("warning ({}): {w}", set.theorem.as_str());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = matches!(
                err.downcast_ref::<Error>(),
                Some(Error::Validation(_) | Error::Domain(_))
            ) || err.downcast_ref::<std::num::ParseIntError>().is_some();
            ExitCode::from(if validation { EXIT_VALIDATION } else { 1 })
        }
    }
}
