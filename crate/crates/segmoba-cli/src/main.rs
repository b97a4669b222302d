//! `segmoba` — build, verify, and benchmark longest-prefix-match engines.
//!
//! Subcommands:
//! * `split`  — compute the cost-optimal prefix-length segmentation for a
//!   ruleset and print the per-segment cost breakdown.
//! * `verify` — replay a trace against an engine and the linear-scan oracle.
//! * `bench`  — measure memory accesses, lookup throughput, and update
//!   throughput over a trace (and optional update stream).
//! * `gen`    — deterministic ruleset / trace / update-stream generators.
//!
//! Exit status: 0 on success, 1 when `verify` finds mismatches, 2 on usage,
//! parse, or I/O errors.

mod engines;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use engines::{Engine, EngineKind};
use segmobatree::baseline::linear_lookup;
use segmobatree::segment::Cost;
use segmobatree::workload::{
    gen_ruleset, gen_trace, gen_update_stream, parse_trace, parse_updates, write_trace,
    write_updates, GenConfig, TraceConfig, Update,
};
use segmobatree::{
    build_cost_matrix, dp_split, parse_ruleset, plan_cost, write_ruleset, AccessCounter, Address,
    AddressWidth, RuleSet, SegmentPlan,
};

#[derive(Parser)]
#[command(name = "segmoba", version, about = "Longest-prefix-match engine bench harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    /// Aligned human-readable table.
    Table,
    /// Machine-readable key=value lines.
    Kv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the DP segment split and its cost breakdown for a ruleset.
    Split(SplitArgs),
    /// Check an engine against the linear-scan oracle over a trace.
    Verify(VerifyArgs),
    /// Benchmark lookups (and optionally updates) over a trace.
    Bench(BenchArgs),
    /// Generate rulesets, traces, and update streams.
    #[command(subcommand)]
    Gen(GenCmd),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    ruleset: PathBuf,
    #[arg(long, default_value_t = 128)]
    width: u8,
    /// Cost an explicit plan (`lo-hi,lo-hi,...`) instead of the DP optimum.
    #[arg(long)]
    plan: Option<String>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    report: ReportFormat,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    ruleset: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 128)]
    width: u8,
    #[arg(long, value_enum, default_value_t = EngineKind::Segmoba)]
    engine: EngineKind,
    /// Override the DP plan (segmoba only).
    #[arg(long)]
    plan: Option<String>,
    /// Test hook: silently drop this prefix from the engine (not the
    /// oracle) after building, to prove mismatches are caught.
    #[arg(long, hide = true)]
    corrupt_drop: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ruleset: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Update stream to replay after the lookup phase.
    #[arg(long)]
    updates: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    width: u8,
    #[arg(long, value_enum, default_value_t = EngineKind::Segmoba)]
    engine: EngineKind,
    /// Override the DP plan (segmoba only).
    #[arg(long)]
    plan: Option<String>,
    /// Shard the read-only lookup phase over this many threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    report: ReportFormat,
}

#[derive(Subcommand)]
enum GenCmd {
    /// Generate a ruleset with a target prefix-length mix.
    Ruleset {
        #[arg(long, default_value_t = 128)]
        width: u8,
        #[arg(long)]
        count: usize,
        /// Length mix as `len:frac,len:frac,...`, fractions summing to 1.
        #[arg(long)]
        hist: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Extend prefixes drawn from this base ruleset.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a lookup trace for a ruleset.
    Trace {
        #[arg(long)]
        ruleset: PathBuf,
        #[arg(long, default_value_t = 128)]
        width: u8,
        /// Distinct base packets before repetition.
        #[arg(long)]
        count: usize,
        /// Emit each base address this many times consecutively.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value_t = 1.0)]
        match_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate an alternating delete/insert update stream.
    Updates {
        #[arg(long)]
        ruleset: PathBuf,
        #[arg(long, default_value_t = 128)]
        width: u8,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Split(args) => cmd_split(args).map(|()| ExitCode::SUCCESS),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Bench(args) => cmd_bench(args).map(|()| ExitCode::SUCCESS),
        Cmd::Gen(args) => cmd_gen(args).map(|()| ExitCode::SUCCESS),
    }
}

fn parse_width(bits: u8) -> Result<AddressWidth> {
    AddressWidth::new(bits).map_err(Into::into)
}

fn load_ruleset(path: &Path, width: AddressWidth) -> Result<RuleSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let parsed = parse_ruleset(BufReader::new(file), width)
        .with_context(|| format!("parsing {}", path.display()))?;
    if parsed.duplicate_count > 0 {
        eprintln!(
            "warning: {} duplicate prefix line(s) in {} resolved last-wins",
            parsed.duplicate_count,
            path.display()
        );
    }
    Ok(parsed.ruleset)
}

fn load_trace(path: &Path, width: AddressWidth) -> Result<Vec<Address>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_trace(BufReader::new(file), width).with_context(|| format!("parsing {}", path.display()))
}

fn parse_plan_arg(plan: &Option<String>, width: AddressWidth) -> Result<Option<SegmentPlan>> {
    plan.as_deref()
        .map(|text| SegmentPlan::parse(text, width).map_err(Into::into))
        .transpose()
}

fn fmt_cost(cost: Cost) -> String {
    if cost.is_integer() {
        cost.numer().to_string()
    } else {
        format!("{}/{}", cost.numer(), cost.denom())
    }
}

fn cost_to_f64(cost: Cost) -> f64 {
    *cost.numer() as f64 / *cost.denom() as f64
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Two-format report sink: aligned table for humans, `key=value` lines for
/// scripts and CI.
struct Report {
    format: ReportFormat,
    rows: Vec<(String, String)>,
}

impl Report {
    fn new(format: ReportFormat) -> Self {
        Report {
            format,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, key: &str, value: impl ToString) {
        self.rows.push((key.to_string(), value.to_string()));
    }

    fn print(&self) {
        match self.format {
            ReportFormat::Kv => {
                for (k, v) in &self.rows {
                    println!("{k}={v}");
                }
            }
            ReportFormat::Table => {
                let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, v) in &self.rows {
                    println!("{k:<width$}  {v}");
                }
            }
        }
    }
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let width = parse_width(args.width)?;
    let rules = load_ruleset(&args.ruleset, width)?;
    let explicit = parse_plan_arg(&args.plan, width)?;

    let t0 = Instant::now();
    let matrix = build_cost_matrix(&rules)?;
    let matrix_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let (table, dp_plan) = dp_split(&matrix);
    let dp_seconds = t1.elapsed().as_secs_f64();

    let plan = explicit.unwrap_or(dp_plan);
    let counts = rules.length_counts();

    let mut report = Report::new(args.report);
    report.push("ruleset", file_stem(&args.ruleset));
    report.push("width", width);
    report.push("rules", rules.len());
    report.push("plan", &plan);
    report.push("plan_cost", fmt_cost(plan_cost(&plan, &matrix)?));
    report.push("min_cost", fmt_cost(table.min_cost()));
    report.push("segments", plan.segments().len());
    for (i, seg) in plan.segments().iter().enumerate() {
        let in_seg: u64 = (seg.lo..=seg.hi).map(|l| counts[l as usize]).sum();
        report.push(&format!("segment.{i}"), seg);
        report.push(&format!("segment.{i}.rules"), in_seg);
        report.push(
            &format!("segment.{i}.hash"),
            fmt_cost(matrix.hash_part(seg.lo, seg.hi)),
        );
        report.push(
            &format!("segment.{i}.tree"),
            fmt_cost(matrix.tree_part(seg.lo, seg.hi)),
        );
        report.push(
            &format!("segment.{i}.cost"),
            fmt_cost(matrix.cost(seg.lo, seg.hi)),
        );
    }
    report.push("matrix_seconds", format!("{matrix_seconds:.3}"));
    report.push("dp_seconds", format!("{dp_seconds:.3}"));
    report.print();
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let width = parse_width(args.width)?;
    let rules = load_ruleset(&args.ruleset, width)?;
    let trace = load_trace(&args.trace, width)?;
    let plan = parse_plan_arg(&args.plan, width)?;
    if plan.is_some() && args.engine != EngineKind::Segmoba {
        bail!("--plan only applies to --engine segmoba");
    }

    let mut engine = Engine::build(args.engine, &rules, plan)?;
    if let Some(text) = &args.corrupt_drop {
        let prefix = segmobatree::lpm::parse_prefix(text, width)
            .map_err(|m| anyhow::anyhow!("bad --corrupt-drop prefix: {m}"))?;
        engine.remove(prefix);
    }

    let mut counter = AccessCounter::new();
    let mut mismatches = 0usize;
    let mut first_detail: Option<String> = None;
    for &ip in &trace {
        let got = engine.lookup(ip, &mut counter).map(|r| (r.prefix, r.next_hop));
        let want = linear_lookup(&rules, ip).map(|r| (r.prefix, r.next_hop));
        if got != want {
            mismatches += 1;
            if first_detail.is_none() {
                let show = |v: Option<(segmobatree::Prefix, u32)>| match v {
                    Some((p, nh)) => format!("{} -> {nh}", p.display(width)),
                    None => "no match".to_string(),
                };
                first_detail = Some(format!(
                    "first mismatch at {}: engine {} vs oracle {}",
                    segmobatree::lpm::fmt_address(ip, width),
                    show(got),
                    show(want)
                ));
            }
        }
    }

    println!(
        "engine={} addresses={} mismatches={mismatches}",
        args.engine.name(),
        trace.len()
    );
    if let Some(detail) = first_detail {
        println!("{detail}");
    }
    Ok(if mismatches == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

struct LookupPhase {
    total_accesses: u128,
    worst: u64,
    seconds: f64,
}

/// Run the trace, counting per-lookup accesses. With more than one thread
/// the trace is split into contiguous shards; counters merge by sum and
/// max, so the counts are identical to a single-threaded run.
fn run_lookups(engine: &Engine, trace: &[Address], threads: usize) -> LookupPhase {
    let t0 = Instant::now();
    let (total_accesses, worst) = if threads <= 1 || trace.len() < threads {
        lookup_shard(engine, trace)
    } else {
        let shard_len = trace.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = trace
                .chunks(shard_len)
                .map(|shard| scope.spawn(move || lookup_shard(engine, shard)))
                .collect();
            let mut total = 0u128;
            let mut worst = 0u64;
            for h in handles {
                let (t, w) = h.join().expect("lookup shard panicked");
                total += t;
                worst = worst.max(w);
            }
            (total, worst)
        })
    };
    LookupPhase {
        total_accesses,
        worst,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn lookup_shard(engine: &Engine, shard: &[Address]) -> (u128, u64) {
    let mut counter = AccessCounter::new();
    let mut total = 0u128;
    let mut worst = 0u64;
    for &ip in shard {
        counter.reset();
        std::hint::black_box(engine.lookup(ip, &mut counter));
        let accesses = counter.total();
        total += accesses as u128;
        worst = worst.max(accesses);
    }
    (total, worst)
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let width = parse_width(args.width)?;
    let rules = load_ruleset(&args.ruleset, width)?;
    let trace = load_trace(&args.trace, width)?;
    if trace.is_empty() {
        bail!("trace {} is empty", args.trace.display());
    }
    let plan = parse_plan_arg(&args.plan, width)?;
    if plan.is_some() && args.engine != EngineKind::Segmoba {
        bail!("--plan only applies to --engine segmoba");
    }

    let t0 = Instant::now();
    let mut engine = Engine::build(args.engine, &rules, plan)?;
    let build_seconds = t0.elapsed().as_secs_f64();

    let lookups = run_lookups(&engine, &trace, args.threads);
    let avg = Cost::new(lookups.total_accesses, trace.len() as u128);

    let mut report = Report::new(args.report);
    report.push("engine", args.engine.name());
    report.push("ruleset", file_stem(&args.ruleset));
    report.push("width", width);
    report.push("rules", rules.len());
    report.push("trace_len", trace.len());
    report.push("threads", args.threads);
    report.push("avg_accesses", format!("{:.4}", cost_to_f64(avg)));
    report.push("avg_accesses_exact", fmt_cost(avg));
    report.push("worst_accesses", lookups.worst);
    report.push(
        "lookups_per_sec",
        format!("{:.0}", trace.len() as f64 / lookups.seconds.max(1e-12)),
    );
    report.push("build_seconds", format!("{build_seconds:.3}"));
    report.push("lookup_seconds", format!("{:.3}", lookups.seconds));
    if let Some(bytes) = engine.estimated_bytes() {
        report.push("estimated_bytes", bytes);
    }
    if let Some(plan) = engine.plan_string() {
        report.push("plan", plan);
    }

    if let Some(update_path) = &args.updates {
        let file =
            File::open(update_path).with_context(|| format!("opening {}", update_path.display()))?;
        let updates = parse_updates(BufReader::new(file), width)
            .with_context(|| format!("parsing {}", update_path.display()))?;
        let mut failed_deletes = 0usize;
        let t1 = Instant::now();
        for update in &updates {
            match update {
                Update::Insert(rule) => engine.insert(*rule)?,
                Update::Delete(prefix) => {
                    if !engine.remove(*prefix) {
                        failed_deletes += 1;
                    }
                }
            }
        }
        let update_seconds = t1.elapsed().as_secs_f64();
        report.push("updates_applied", updates.len());
        report.push("updates_failed_deletes", failed_deletes);
        report.push(
            "updates_per_sec",
            format!("{:.0}", updates.len() as f64 / update_seconds.max(1e-12)),
        );
        report.push("update_seconds", format!("{update_seconds:.3}"));
    }

    report.print();
    Ok(())
}

fn parse_hist(text: &str) -> Result<Vec<(u8, f64)>> {
    let mut hist = Vec::new();
    for part in text.split(',') {
        let (len, frac) = part
            .split_once(':')
            .with_context(|| format!("bad histogram entry {part:?}, expected len:frac"))?;
        let len: u8 = len.trim().parse().with_context(|| format!("bad length in {part:?}"))?;
        let frac: f64 = frac.trim().parse().with_context(|| format!("bad fraction in {part:?}"))?;
        hist.push((len, frac));
    }
    Ok(hist)
}

fn create_out(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("creating {}", path.display())
    })?))
}

fn cmd_gen(cmd: GenCmd) -> Result<()> {
    match cmd {
        GenCmd::Ruleset {
            width,
            count,
            hist,
            seed,
            base,
            out,
        } => {
            let width = parse_width(width)?;
            let base = base.map(|p| load_ruleset(&p, width)).transpose()?;
            let cfg = GenConfig {
                width,
                rule_count: count,
                hist: parse_hist(&hist)?,
                seed,
                base,
            };
            let rules = gen_ruleset(&cfg)?;
            let mut sink = create_out(&out)?;
            write_ruleset(&rules, &mut sink)?;
            sink.flush()?;
            eprintln!("wrote {} rules to {} (seed {seed})", rules.len(), out.display());
        }
        GenCmd::Trace {
            ruleset,
            width,
            count,
            repeat,
            match_fraction,
            seed,
            out,
        } => {
            let width = parse_width(width)?;
            let rules = load_ruleset(&ruleset, width)?;
            let cfg = TraceConfig {
                packet_count: count,
                repeat_factor: repeat,
                match_fraction,
                seed,
            };
            let trace = gen_trace(&rules, &cfg)?;
            let mut sink = create_out(&out)?;
            write_trace(&trace, width, &mut sink)?;
            sink.flush()?;
            eprintln!(
                "wrote {} addresses to {} (seed {seed})",
                trace.len(),
                out.display()
            );
        }
        GenCmd::Updates {
            ruleset,
            width,
            count,
            seed,
            out,
        } => {
            let width = parse_width(width)?;
            let rules = load_ruleset(&ruleset, width)?;
            let updates = gen_update_stream(&rules, count, seed)?;
            let mut sink = create_out(&out)?;
            write_updates(&updates, width, &mut sink)?;
            sink.flush()?;
            eprintln!(
                "wrote {} updates to {} (seed {seed})",
                updates.len(),
                out.display()
            );
        }
    }
    Ok(())
}
