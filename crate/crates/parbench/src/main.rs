//! `parbench` — benchmark CLI for the flows combinator library.
//!
//! Each benchmark subcommand verifies the parallel result against its
//! sequential oracle before timing anything: a mismatch exits with code 2.
//! Timings follow the measurement methodology in [`parbench::measure`]
//! (one discarded warm-up, mean/stddev over the repetitions, speedup
//! against the sequential backend, overhead against direct dispatch where
//! a direct implementation exists) and can be written as CSV. Distributed
//! runs can additionally export a message trace as JSON Lines.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flows::{import_jsonl, stats, unshuffle, BackendConf, DistConf, TraceLog};
use parbench::{
    direct_pool_dispatch, first_primes, gentleman_matmul, mersenne, overhead_pct, parse_puzzles,
    rabin_miller, rabin_miller_seq, random_matrix, seq_mat_mul, solve, speedup, sudoku_batch,
    time_reps, write_csv, BaseChecker, BenchReport, Timing, Verdict,
};

#[derive(Parser)]
#[command(
    name = "parbench",
    version,
    about = "Benchmarks for the flows parallel-combinator library"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multi-base strong-probable-prime test of 2^exp - 1.
    RabinMiller {
        /// Mersenne exponent: the candidate is 2^exp - 1.
        #[arg(long, default_value_t = 2203)]
        exp: u32,
        /// Number of bases (the first k primes).
        #[arg(long, default_value_t = 64)]
        bases: usize,
        #[command(flatten)]
        run: RunOpts,
        /// Write a JSON Lines message trace here (simdist backend only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Torus block matrix multiplication checked against the O(n^3) oracle.
    Matmul {
        /// Matrix dimension (must be divisible by the torus side).
        #[arg(long, default_value_t = 256)]
        dim: usize,
        /// Core budget; the torus side is floor(sqrt(cores)).
        #[arg(long, default_value_t = 4)]
        cores: usize,
        /// Seed for the random operands.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        run: RunOpts,
        /// Write a JSON Lines message trace here (simdist backend only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Solve a batch of Sudoku puzzles (one 81-char line per puzzle).
    Sudoku {
        /// Puzzle file: 81 cells per line, '.' or '0' for blanks.
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Aggregate statistics of an exported trace file.
    TraceStats {
        /// The JSON Lines trace to analyze.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Backend under test.
    #[arg(long, value_enum, default_value_t = BackendKind::Pool)]
    backend: BackendKind,
    /// Worker count (ignored by the sequential backend).
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Timed repetitions; one extra warm-up run is discarded.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Write the CSV report here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum BackendKind {
    /// In-order evaluation on the calling thread.
    Seq,
    /// Shared-memory thread pool.
    Pool,
    /// Simulated distributed machine with serialized channels.
    Simdist,
}

impl BackendKind {
    fn label(self) -> &'static str {
        match self {
            BackendKind::Seq => "seq",
            BackendKind::Pool => "pool",
            BackendKind::Simdist => "simdist",
        }
    }

    fn conf(self, workers: usize, trace: Option<Arc<TraceLog>>) -> BackendConf {
        match self {
            BackendKind::Seq => BackendConf::sequential(),
            BackendKind::Pool => BackendConf::pool(workers),
            BackendKind::Simdist => {
                let mut dc = DistConf::new(workers);
                dc.trace = trace;
                BackendConf::Dist(dc)
            }
        }
    }

    fn effective_workers(self, workers: usize) -> usize {
        match self {
            BackendKind::Seq => 1,
            _ => workers,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn run(cli: Cli) -> Result<ExitCode, AnyError> {
    match cli.command {
        Command::RabinMiller {
            exp,
            bases,
            run,
            trace,
        } => run_rabin_miller(exp, bases, &run, trace.as_deref().map(PathBuf::from)),
        Command::Matmul {
            dim,
            cores,
            seed,
            run,
            trace,
        } => run_matmul(dim, cores, seed, &run, trace.as_deref().map(PathBuf::from)),
        Command::Sudoku { file, run } => run_sudoku(&file, &run),
        Command::TraceStats { input } => run_trace_stats(&input),
    }
}

fn validate_run(opts: &RunOpts, trace: &Option<PathBuf>) -> Result<(), String> {
    if opts.workers == 0 {
        return Err("--workers must be at least 1".into());
    }
    if trace.is_some() && opts.backend != BackendKind::Simdist {
        return Err("--trace requires --backend simdist".into());
    }
    Ok(())
}

fn report_line(report: &BenchReport) {
    print!(
        "{:<12} {:<8} workers={:<3} tasks={:<5} mean {:.6} s (stddev {:.6} s, {} reps)",
        report.benchmark,
        report.backend,
        report.workers,
        report.tasks,
        report.mean_s,
        report.stddev_s,
        report.reps
    );
    if let Some(s) = report.speedup {
        print!("  speedup {s:.2}x");
    }
    if let (Some(o), Some(e)) = (report.overhead_pct, report.overhead_err_pct) {
        print!("  overhead {o:+.2}% +/- {e:.2}%");
    }
    println!();
}

fn finish(reports: Vec<BenchReport>, csv: &Option<PathBuf>) -> Result<ExitCode, AnyError> {
    for report in &reports {
        report_line(report);
    }
    if let Some(path) = csv {
        write_csv(BufWriter::new(File::create(path)?), &reports)?;
        println!("csv report written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn export_trace(log: &TraceLog, path: &PathBuf) -> Result<(), AnyError> {
    log.export_jsonl(BufWriter::new(File::create(path)?))?;
    let s = stats(&log.snapshot());
    println!(
        "trace written to {} ({} events, {} messages, {} via master)",
        path.display(),
        log.len(),
        s.messages_total,
        s.messages_via_master
    );
    Ok(())
}

fn describe_verdict(v: &Verdict) -> String {
    match v {
        Verdict::ProbablePrime => "probable prime".into(),
        Verdict::Composite { index, base } => {
            format!("composite (first failing base {base} at index {index})")
        }
    }
}

fn run_rabin_miller(
    exp: u32,
    base_count: usize,
    opts: &RunOpts,
    trace: Option<PathBuf>,
) -> Result<ExitCode, AnyError> {
    validate_run(opts, &trace)?;
    let n = mersenne(exp);
    let bases = first_primes(base_count);
    let conf = opts.backend.conf(opts.workers, None);
    let width = opts.backend.effective_workers(opts.workers);

    println!(
        "rabin-miller: n = 2^{exp} - 1, {} bases, backend {}({})",
        bases.len(),
        opts.backend.label(),
        width
    );

    // Verify against the sequential oracle before timing anything.
    let oracle = rabin_miller_seq(&n, &bases)?;
    let verdict = rabin_miller(&n, &bases, &conf)?;
    if verdict != oracle {
        eprintln!(
            "verification FAILED: backend says {}, sequential oracle says {}",
            describe_verdict(&verdict),
            describe_verdict(&oracle)
        );
        return Ok(ExitCode::from(2));
    }
    println!(
        "verdict: {} (matches sequential oracle)",
        describe_verdict(&verdict)
    );

    let timing = time_reps(opts.reps, || {
        rabin_miller(&n, &bases, &conf).expect("benchmark run failed")
    })?;
    let seq_conf = BackendConf::sequential();
    let seq_timing = time_reps(opts.reps, || {
        rabin_miller(&n, &bases, &seq_conf).expect("sequential run failed")
    })?;

    // Direct baseline: the same base slices on a bare thread pool.
    let checker = BaseChecker::new(&n)?;
    let slices = unshuffle(width, bases.clone());
    let direct_tasks: Vec<_> = slices
        .into_iter()
        .map(|slice| {
            let checker = checker.clone();
            move || slice.iter().map(|&b| checker.passes(b)).collect::<Vec<bool>>()
        })
        .collect();
    let direct_timing = time_reps(opts.reps, || direct_pool_dispatch(width, &direct_tasks))?;
    let (ovh, ovh_err) = overhead_pct(&timing, &direct_timing);

    let reports = assemble_reports(
        "rabin-miller",
        opts,
        width,
        width,
        timing,
        seq_timing,
        Some((ovh, ovh_err)),
    );

    if let Some(path) = &trace {
        let log = Arc::new(TraceLog::new());
        let traced = opts.backend.conf(opts.workers, Some(Arc::clone(&log)));
        rabin_miller(&n, &bases, &traced)?;
        export_trace(&log, path)?;
    }
    finish(reports, &opts.csv)
}

fn run_matmul(
    dim: usize,
    cores: usize,
    seed: u64,
    opts: &RunOpts,
    trace: Option<PathBuf>,
) -> Result<ExitCode, AnyError> {
    validate_run(opts, &trace)?;
    let a = random_matrix(dim, seed);
    let b = random_matrix(dim, seed.wrapping_add(1));
    let conf = opts.backend.conf(opts.workers, None);
    let side = (cores as f64).sqrt().floor() as usize;
    let tasks = side * side;

    println!(
        "matmul: {dim}x{dim} integer matrices, {side}x{side} torus, backend {}({})",
        opts.backend.label(),
        opts.backend.effective_workers(opts.workers)
    );

    let oracle = seq_mat_mul(&a, &b)?;
    let result = gentleman_matmul(&a, &b, cores, &conf)?;
    if result != oracle {
        eprintln!("verification FAILED: torus product differs from the O(n^3) oracle");
        return Ok(ExitCode::from(2));
    }
    println!("result matches the O(n^3) oracle");

    let timing = time_reps(opts.reps, || {
        gentleman_matmul(&a, &b, cores, &conf).expect("benchmark run failed")
    })?;
    let seq_conf = BackendConf::sequential();
    let seq_timing = time_reps(opts.reps, || {
        gentleman_matmul(&a, &b, cores, &seq_conf).expect("sequential run failed")
    })?;

    let reports = assemble_reports(
        "matmul",
        opts,
        opts.backend.effective_workers(opts.workers),
        tasks,
        timing,
        seq_timing,
        None,
    );

    if let Some(path) = &trace {
        let log = Arc::new(TraceLog::new());
        let traced = opts.backend.conf(opts.workers, Some(Arc::clone(&log)));
        gentleman_matmul(&a, &b, cores, &traced)?;
        export_trace(&log, path)?;
    }
    finish(reports, &opts.csv)
}

fn run_sudoku(file: &PathBuf, opts: &RunOpts) -> Result<ExitCode, AnyError> {
    validate_run(opts, &None)?;
    let text = std::fs::read_to_string(file)?;
    let puzzles = parse_puzzles(&text)?;
    if puzzles.is_empty() {
        return Err(format!("no puzzles found in {}", file.display()).into());
    }
    let conf = opts.backend.conf(opts.workers, None);
    let width = opts.backend.effective_workers(opts.workers);

    println!(
        "sudoku: {} puzzles from {}, backend {}({})",
        puzzles.len(),
        file.display(),
        opts.backend.label(),
        width
    );

    let oracle: Vec<_> = puzzles.iter().map(solve).collect();
    let result = sudoku_batch(puzzles.clone(), &conf)?;
    if result != oracle {
        eprintln!("verification FAILED: batch solutions differ from the sequential oracle");
        return Ok(ExitCode::from(2));
    }
    let solved = oracle.iter().filter(|s| s.is_some()).count();
    println!(
        "solved {} of {} puzzles (matches sequential oracle)",
        solved,
        puzzles.len()
    );

    let timing = time_reps(opts.reps, || {
        sudoku_batch(puzzles.clone(), &conf).expect("benchmark run failed")
    })?;
    let seq_conf = BackendConf::sequential();
    let seq_timing = time_reps(opts.reps, || {
        sudoku_batch(puzzles.clone(), &seq_conf).expect("sequential run failed")
    })?;

    let direct_tasks: Vec<_> = puzzles
        .iter()
        .map(|p| {
            let p = p.clone();
            move || solve(&p)
        })
        .collect();
    let direct_timing = time_reps(opts.reps, || direct_pool_dispatch(width, &direct_tasks))?;
    let (ovh, ovh_err) = overhead_pct(&timing, &direct_timing);

    let reports = assemble_reports(
        "sudoku",
        opts,
        width,
        puzzles.len(),
        timing,
        seq_timing,
        Some((ovh, ovh_err)),
    );
    finish(reports, &opts.csv)
}

/// Builds the CSV rows: the sequential baseline first (when it is not
/// itself the backend under test), then the tested backend.
fn assemble_reports(
    benchmark: &str,
    opts: &RunOpts,
    workers: usize,
    tasks: usize,
    timing: Timing,
    seq_timing: Timing,
    overhead: Option<(f64, f64)>,
) -> Vec<BenchReport> {
    let mut reports = Vec::new();
    if opts.backend != BackendKind::Seq {
        reports.push(BenchReport {
            benchmark: benchmark.into(),
            backend: "seq".into(),
            workers: 1,
            tasks,
            reps: seq_timing.reps,
            mean_s: seq_timing.mean_s,
            stddev_s: seq_timing.stddev_s,
            speedup: Some(1.0),
            overhead_pct: None,
            overhead_err_pct: None,
        });
    }
    let sp = if opts.backend == BackendKind::Seq {
        1.0 // By definition: the baseline compared with itself.
    } else {
        speedup(&seq_timing, &timing)
    };
    reports.push(BenchReport {
        benchmark: benchmark.into(),
        backend: opts.backend.label().into(),
        workers,
        tasks,
        reps: timing.reps,
        mean_s: timing.mean_s,
        stddev_s: timing.stddev_s,
        speedup: Some(sp),
        overhead_pct: overhead.map(|(o, _)| o),
        overhead_err_pct: overhead.map(|(_, e)| e),
    });
    reports
}

fn run_trace_stats(input: &PathBuf) -> Result<ExitCode, AnyError> {
    let events = import_jsonl(BufReader::new(File::open(input)?))?;
    let s = stats(&events);
    println!("trace: {} ({} events)", input.display(), events.len());
    println!(
        "messages: {} total, {} via master ({} bytes via master)",
        s.messages_total, s.messages_via_master, s.bytes_via_master
    );
    if !s.per_tag_counts.is_empty() {
        println!("per tag:");
        for (tag, count) in &s.per_tag_counts {
            println!("  {tag:<12} {count}");
        }
    }
    if !s.per_link_counts.is_empty() {
        println!("per link:");
        for ((src, dst), count) in &s.per_link_counts {
            println!("  {src} -> {dst:<4} {count}");
        }
    }
    Ok(ExitCode::SUCCESS)
}
