use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aoisim::experiment::{bench, run_experiment, write_outputs, ExperimentSpec, Preset};
use aoisim::oracle::{replay_witness, run_verify, VerifyOptions, Witness};
use aoisim::{PolicyKind, SimConfig, SlotRange};

#[derive(Parser)]
#[command(name = "aoisim", version, about = "Age-of-information scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run policies over a horizon grid and write metrics CSV.
    Simulate(SimulateArgs),
    /// Check HLF-D against exhaustive search on random small instances.
    Verify(VerifyArgs),
    /// Time one slot per policy across flow counts.
    Bench(BenchArgs),
    /// Re-run the oracle on a saved witness file.
    Replay { witness: PathBuf },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "fig4")]
    preset: Preset,
    /// TOML experiment file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',')]
    policy: Option<Vec<PolicyKind>>,
    /// Comma-separated horizon grid.
    #[arg(long = "T", value_delimiter = ',')]
    horizons: Option<Vec<u32>>,
    #[arg(long = "M")]
    flows: Option<usize>,
    #[arg(long = "p")]
    channel_on_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write trace files for the first N replications of each cell.
    #[arg(long)]
    traces: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest flow count.
    #[arg(long = "M", default_value_t = 3)]
    max_flows: usize,
    /// Largest horizon.
    #[arg(long = "T", default_value_t = 6)]
    max_slots: usize,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 2020)]
    seed: u64,
    #[arg(long = "p", default_value_t = 0.8)]
    channel_on_prob: f64,
    #[arg(long, default_value = "1,3", value_parser = parse_range)]
    actuation: SlotRange,
    #[arg(long, default_value = "1,4", value_parser = parse_range)]
    deadline: SlotRange,
    /// Directory for counterexample witnesses.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay a witness file instead of running a batch.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long = "M", value_delimiter = ',', default_value = "16,256,1024")]
    flows: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    policy: Option<Vec<PolicyKind>>,
    #[arg(long, default_value_t = 2000)]
    slots: u32,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long = "p", default_value_t = 0.8)]
    channel_on_prob: f64,
    #[arg(long, default_value_t = 2020)]
    seed: u64,
    /// Write rows as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<SlotRange, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok(SlotRange(lo, hi))
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => args.preset.spec(),
    };
    if args.config.is_none() {
        spec.out_dir = PathBuf::from(format!("results/{}", args.preset));
    }
    if let Some(p) = args.policy {
        spec.policies = p;
    }
    if let Some(h) = args.horizons {
        spec.horizons = h;
    }
    let c: &mut SimConfig = &mut spec.config;
    if let Some(m) = args.flows {
        c.flows = m;
    }
    if let Some(p) = args.channel_on_prob {
        c.channel_on_prob = p;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(r) = args.reps {
        c.replications = r;
    }
    if let Some(o) = args.out {
        spec.out_dir = o;
    }
    if let Some(n) = args.traces {
        spec.trace_reps = n;
    }
    spec.validate()?;

    let result = run_experiment(&spec)?;
    for path in write_outputs(&result)? {
        println!("wrote {}", path.display());
    }
    let metrics = spec.preset.metrics();
    for &policy in &spec.policies {
        let line: Vec<String> = metrics
            .iter()
            .map(|m| format!("{}={:.4}", m.name(), result.horizon_mean(policy, *m)))
            .collect();
        let drops: usize = result
            .cells
            .iter()
            .filter(|c| c.policy == policy)
            .map(|c| c.report.total_drops)
            .sum();
        println!("{:<7} {} drops={drops}", policy.name(), line.join(" "));
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(path: &Path) -> Result<ExitCode> {
    let witness = Witness::load(path).with_context(|| format!("reading {}", path.display()))?;
    let (verdict, replayed) = replay_witness(&witness)?;
    println!(
        "max={} hlf-d={} replayed schedule={} first divergence at t={}",
        verdict.max_total.value, verdict.hlf_d_total.value, replayed.value, witness.slot
    );
    let same = verdict.max_total == witness.max_total
        && verdict.hlf_d_total == witness.hlf_d_total
        && replayed == witness.max_total;
    if same {
        println!("verdict reproduced");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("verdict differs from the saved witness");
        Ok(ExitCode::FAILURE)
    }
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    if let Some(path) = &args.replay {
        return replay(path);
    }
    let opts = VerifyOptions {
        max_flows: args.max_flows,
        max_slots: args.max_slots,
        count: args.count,
        seed: args.seed,
        actuation: args.actuation,
        rel_deadline: args.deadline,
        channel_on_prob: args.channel_on_prob,
        witness_dir: args.out,
        ..VerifyOptions::default()
    };
    opts.validate()?;
    if opts.count == 0 {
        eprintln!("warning: count is 0, nothing to verify");
        return Ok(ExitCode::SUCCESS);
    }
    let report = run_verify(&opts)?;
    println!(
        "instances={} optimal={} work-conserving-optimal={} leaves={}",
        report.instances, report.optimal, report.work_conserving_optimal, report.leaves
    );
    for w in &report.witnesses {
        println!("witness {}", w.display());
    }
    if report.passed() {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL: {} counterexamples", report.failures.len());
        Ok(ExitCode::FAILURE)
    }
}

fn run_bench(args: BenchArgs) -> Result<ExitCode> {
    let base = SimConfig {
        channel_on_prob: args.channel_on_prob,
        seed: args.seed,
        ..SimConfig::default()
    };
    let policies = args.policy.unwrap_or_else(|| PolicyKind::BUILTIN.to_vec());
    let rows = bench(&base, &policies, &args.flows, args.slots, args.repeats)?;
    println!("{:<7} {:>6} {:>14} {:>14} {:>8}", "policy", "M", "ns/slot", "ns/flow-slot", "ratio");
    for r in &rows {
        println!(
            "{:<7} {:>6} {:>14.1} {:>14.2} {:>8.3}",
            r.policy.name(),
            r.flows,
            r.ns_per_slot,
            r.ns_per_flow_slot,
            r.linear_ratio
        );
    }
    if let Some(path) = args.out {
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    if rows.iter().any(|r| r.linear_ratio > 2.0) {
        bail!("per-slot time exceeds twice the linear extrapolation");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => run_bench(a),
        Command::Replay { witness } => replay(&witness),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
