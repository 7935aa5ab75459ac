//! `relaynet` command line: run scenarios, validate scenario files and
//! inspect relay allocations.
//!
//! Exit codes: 0 success, 1 runtime fault, 2 usage error (bad arguments or an
//! unreadable scenario file), 3 scenario validation failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use relaynet::alloc::{self, ORACLE_MAX_FLOWS, ORACLE_MAX_TOTAL};
use relaynet::io::{self, fmt_sig};
use relaynet::model::validate_scenario;
use relaynet::sim::{self, RunOptions};
use relaynet::{Execution, FlowId, Params, Scenario};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "relaynet", version, about = "Relay swarm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace and summary.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Keep agent positions every N ticks.
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        stride: u64,
        /// Evaluate agents one at a time instead of in parallel.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Check a scenario file and list every violation.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Distribute relays over flows of the given lengths.
    Allocate {
        /// Comma separated flow lengths.
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<f64>,
        /// Number of relays to distribute.
        #[arg(long)]
        total: usize,
        /// Take link parameters from this scenario instead of the defaults.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Validation,
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    io::load_scenario(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn report_violations(sc: &Scenario, quiet: bool) -> bool {
    let violations = validate_scenario(sc);
    for v in &violations {
        eprintln!("{v}");
    }
    if violations.is_empty() && !quiet {
        println!("{}: ok", sc.name);
    }
    violations.is_empty()
}

fn cmd_run(
    path: &Path,
    out: &Path,
    format: Format,
    stride: u64,
    sequential: bool,
    quiet: bool,
) -> Result<(), Failure> {
    let sc = load(path)?;
    if !report_violations(&sc, true) {
        return Err(Failure::Validation);
    }
    let opts = RunOptions {
        exec: if sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        stride,
    };
    let trace = sim::run(&sc, opts).context("simulation failed")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match format {
        Format::Csv => io::emit_csv(&trace)
            .write_dir(out)
            .context("writing trace")?,
        Format::Json => fs::write(out.join("trace.json"), io::trace_to_json(&trace))
            .context("writing trace")?,
    }
    let summary = sim::summarize(&trace);
    fs::write(out.join("summary.json"), io::to_pretty_json(&summary) + "\n")
        .context("writing summary")?;
    if !quiet {
        println!(
            "{}: {} ticks, {} commands, connected at every tick: {}",
            sc.name, summary.ticks, summary.commands, summary.always_connected
        );
        for (k, c) in &summary.final_cost {
            println!("  {k} final cost {}", fmt_sig(*c));
        }
    }
    Ok(())
}

fn cmd_allocate(lengths: &[f64], total: usize, scenario: Option<&Path>) -> Result<(), Failure> {
    let params = match scenario {
        Some(path) => load(path)?.params,
        None => Params::default(),
    };
    if let Some(bad) = lengths.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Failure::Usage(format!("flow length {bad} is not positive")));
    }
    let lengths: BTreeMap<FlowId, f64> = lengths
        .iter()
        .enumerate()
        .map(|(k, &d)| (FlowId(k as u32 + 1), d))
        .collect();
    let greedy = alloc::greedy_allocate(&lengths, total, &params)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    println!("flow,length,relays,cost");
    for (k, &d) in &lengths {
        let m = greedy.counts[k];
        println!("{k},{},{m},{}", fmt_sig(d), fmt_sig(alloc::ideal_flow_cost(d, m, &params)));
    }
    let cost = greedy.cost(&lengths, &params);
    println!("total,,{total},{}", fmt_sig(cost));
    if total <= ORACLE_MAX_TOTAL && lengths.len() <= ORACLE_MAX_FLOWS {
        let best = alloc::brute_force_allocate(&lengths, total, &params)
            .context("exhaustive allocation")?;
        let best_cost = best.cost(&lengths, &params);
        println!(
            "oracle: {} ({})",
            if best_cost == cost { "agrees" } else { "DIFFERS" },
            fmt_sig(best_cost)
        );
    } else {
        println!("oracle: skipped (more than {ORACLE_MAX_TOTAL} relays or {ORACLE_MAX_FLOWS} flows)");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            format,
            stride,
            sequential,
            quiet,
        } => cmd_run(&scenario, &out, format, stride, sequential, quiet),
        Command::Validate { scenario, quiet } => load(&scenario).and_then(|sc| {
            if report_violations(&sc, quiet) {
                Ok(())
            } else {
                Err(Failure::Validation)
            }
        }),
        Command::Allocate {
            lengths,
            total,
            scenario,
        } => cmd_allocate(&lengths, total, scenario.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Validation) => ExitCode::from(EXIT_VALIDATION),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
