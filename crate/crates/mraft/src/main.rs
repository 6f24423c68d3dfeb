//! Command-line entry point: run scenarios, compare protocols, verify traces.
//!
//! Exit codes: 0 on success, 1 when an invariant violation is found, 2 on
//! configuration or I/O errors.

use clap::{Parser, Subcommand};
use mraft::harness::canned;
use mraft::harness::checks::{check_trace, CheckContext};
use mraft::harness::compare::{compare, to_csv};
use mraft::harness::runner::run_scenario;
use mraft::harness::scenario::{load_scenario, Protocol, Scenario};
use mraft::simnet::trace::Trace;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Env var naming a directory searched for scenario files given by bare name.
const SCENARIO_DIR_ENV: &str = "MRAFT_SCENARIO_DIR";

#[derive(Parser)]
#[command(name = "mraft", about = "Deterministic consensus simulator: MRaft, Raft, and PBFT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one seed and report metrics and violations.
    Run {
        /// Scenario file (JSON); bare names are resolved against $MRAFT_SCENARIO_DIR.
        #[arg(long)]
        scenario: String,
        /// Seed override; defaults to the seed embedded in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the JSON metrics report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the fault-free complexity benchmark across protocols and sizes.
    Compare {
        /// Comma-separated protocols.
        #[arg(long, default_value = "mraft,raft,pbft", value_delimiter = ',')]
        protocols: Vec<String>,
        /// Comma-separated fault thresholds; each protocol is sized by its own formula.
        #[arg(long, default_value = "1,3,6", value_delimiter = ',')]
        f: Vec<usize>,
        /// Committed batches per run.
        #[arg(long, default_value_t = 10)]
        commits: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write every canned scenario to a directory as JSON.
    Bundle {
        #[arg(long, default_value = "scenarios")]
        out: PathBuf,
    },
    /// Re-check every invariant over a saved trace.
    Verify {
        /// Trace file produced by `run --trace`.
        #[arg(long)]
        trace: PathBuf,
        /// Scenario the trace came from, for exact quorum sizing; inferred
        /// from the trace when omitted.
        #[arg(long)]
        scenario: Option<String>,
    },
}

fn resolve_scenario(path: &str) -> String {
    if Path::new(path).exists() {
        return path.to_string();
    }
    if let Ok(dir) = std::env::var(SCENARIO_DIR_ENV) {
        let candidate = Path::new(&dir).join(path);
        if candidate.exists() {
            return candidate.to_string_lossy().into_owned();
        }
        let with_ext = Path::new(&dir).join(format!("{path}.json"));
        if with_ext.exists() {
            return with_ext.to_string_lossy().into_owned();
        }
    }
    path.to_string()
}

fn cmd_run(
    scenario: &str,
    seed: Option<u64>,
    trace_out: Option<&Path>,
    report_out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let scenario: Scenario = load_scenario(&resolve_scenario(scenario))?;
    let seed = seed.unwrap_or(scenario.seed);
    let (report, trace) = run_scenario(&scenario, seed)?;
    if let Some(path) = trace_out {
        std::fs::write(path, trace.render())?;
    }
    if let Some(path) = report_out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    println!(
        "scenario={} protocol={} n={} seed={}",
        report.scenario.name,
        report.scenario.protocol.label(),
        report.scenario.n,
        seed
    );
    println!(
        "sim_time_ms={:.3} committed_batches={} committed_requests={} elections={}",
        report.sim_time_ms, report.committed_batches, report.committed_requests, report.elections
    );
    println!(
        "messages_total={} replication_messages={} messages_per_commit={:.3}",
        report.messages_total, report.replication_messages, report.messages_per_commit
    );
    if let Some(lat) = &report.leader_commit_latency {
        println!(
            "leader_commit_latency_ms mean={:.3} median={:.3} p99={:.3}",
            lat.mean_ms, lat.median_ms, lat.p99_ms
        );
    }
    if let Some(lat) = &report.request_latency {
        println!(
            "request_latency_ms mean={:.3} median={:.3} p99={:.3}",
            lat.mean_ms, lat.median_ms, lat.p99_ms
        );
    }
    println!("trace_digest={}", report.trace_digest);
    if report.violations.is_empty() {
        println!("violations=0");
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &report.violations {
            eprintln!("violation invariant={} at_ms={:.3} detail={}", v.invariant, v.at_ms, v.detail);
        }
        println!("violations={}", report.violations.len());
        Ok(ExitCode::from(1))
    }
}

fn cmd_compare(
    protocols: &[String],
    fs: &[usize],
    commits: u64,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let protocols: Vec<Protocol> = protocols
        .iter()
        .map(|p| match p.as_str() {
            "mraft" => Ok(Protocol::MRaft),
            "raft" => Ok(Protocol::Raft),
            "pbft" => Ok(Protocol::Pbft),
            other => Err(anyhow::anyhow!("unknown protocol {other:?}")),
        })
        .collect::<Result<_, _>>()?;
    let rows = compare(&protocols, fs, commits, seed)?;
    let csv = to_csv(&rows);
    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bundle(out: &Path) -> anyhow::Result<ExitCode> {
    std::fs::create_dir_all(out)?;
    let mut scenarios = canned::all_canned();
    let mut table1_n5 = canned::table1_latency(5);
    table1_n5.name = "table1_n5".to_string();
    scenarios.push(table1_n5);
    for s in &scenarios {
        let path = out.join(format!("{}.json", s.name));
        std::fs::write(&path, serde_json::to_string_pretty(s)?)?;
    }
    println!("wrote {} scenarios to {}", scenarios.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

/// Quorum context for a saved trace: exact when the scenario is provided,
/// otherwise recovered from the message labels and node ids in the trace.
fn infer_context(trace: &Trace, scenario: Option<&Scenario>) -> CheckContext {
    if let Some(s) = scenario {
        return CheckContext { q_rep: s.q_rep() };
    }
    let mut n = 0usize;
    let mut protocol = Protocol::MRaft;
    for rec in trace.records() {
        for node in [rec.from, rec.to].into_iter().flatten() {
            n = n.max(node + 1);
        }
        if rec.kind == "send" {
            match rec.note_value("msg") {
                Some("preprepare") => protocol = Protocol::Pbft,
                Some("commitnotice") => protocol = Protocol::Raft,
                _ => {}
            }
        }
    }
    let q_rep = match protocol {
        Protocol::MRaft => 2 * ((n.max(2) - 2) / 3) + 1,
        Protocol::Raft => n / 2 + 1,
        Protocol::Pbft => 2 * ((n.max(1) - 1) / 3) + 1,
    };
    CheckContext { q_rep }
}

fn cmd_verify(trace_path: &Path, scenario: Option<&str>) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(trace_path)?;
    let trace = Trace::parse(&text)
        .ok_or_else(|| anyhow::anyhow!("malformed trace file {}", trace_path.display()))?;
    let scenario = scenario
        .map(|s| load_scenario(&resolve_scenario(s)))
        .transpose()?;
    let ctx = infer_context(&trace, scenario.as_ref());
    let violations = check_trace(&trace, ctx);
    println!("records={} trace_digest={}", trace.len(), trace.digest());
    if violations.is_empty() {
        println!("violations=0");
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            eprintln!("violation invariant={} at_ms={:.3} detail={}", v.invariant, v.at_ms, v.detail);
        }
        println!("violations={}", violations.len());
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, trace, report } => {
            cmd_run(scenario, *seed, trace.as_deref(), report.as_deref())
        }
        Command::Compare { protocols, f, commits, seed, out } => {
            cmd_compare(protocols, f, *commits, *seed, out.as_deref())
        }
        Command::Bundle { out } => cmd_bundle(out),
        Command::Verify { trace, scenario } => cmd_verify(trace, scenario.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
