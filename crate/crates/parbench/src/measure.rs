//! Timing methodology: repeated wall-clock runs, mean/stddev, speedup
//! against a sequential baseline, and overhead of the combinator path
//! against a hand-rolled dispatch of the same tasks.
//!
//! One warm-up run is performed and discarded before the timed repetitions
//! so allocator and cache effects do not pollute the first sample. All
//! statistics are over the timed repetitions only: `stddev` is the sample
//! standard deviation, and derived quantities (speedup, overhead) carry an
//! error margin propagated from each operand's standard error of the mean.
//! The harness itself stays single-threaded; parallelism comes exclusively
//! from the backend under test.

use std::hint::black_box;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use thiserror::Error;

/// A measurement harness failure.
#[derive(Debug, Error)]
pub enum MeasureError {
    /// Statistics over fewer than 3 repetitions are meaningless.
    #[error("need at least 3 repetitions, got {0}")]
    TooFewReps(usize),
    /// Writing the CSV failed.
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
    /// Creating the output file failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wall-clock statistics over the timed repetitions of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// Mean seconds per repetition.
    pub mean_s: f64,
    /// Sample standard deviation of the repetitions, in seconds.
    pub stddev_s: f64,
    /// Number of timed repetitions (warm-up excluded).
    pub reps: usize,
}

impl Timing {
    fn from_samples(samples: &[f64]) -> Timing {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Timing {
            mean_s: mean,
            stddev_s: var.sqrt(),
            reps: n,
        }
    }

    /// Standard error of the mean.
    pub fn sem_s(&self) -> f64 {
        self.stddev_s / (self.reps as f64).sqrt()
    }
}

/// Runs `f` once discarded, then `reps` timed times.
///
/// The closure's result is passed through [`black_box`] so the work cannot
/// be optimized away between repetitions.
pub fn time_reps<T>(reps: usize, mut f: impl FnMut() -> T) -> Result<Timing, MeasureError> {
    if reps < 3 {
        return Err(MeasureError::TooFewReps(reps));
    }
    black_box(f()); // Warm-up, discarded.
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            black_box(f());
            start.elapsed().as_secs_f64()
        })
        .collect();
    Ok(Timing::from_samples(&samples))
}

/// Speedup of `parallel` relative to `sequential` (&gt; 1 means faster).
pub fn speedup(sequential: &Timing, parallel: &Timing) -> f64 {
    sequential.mean_s / parallel.mean_s
}

/// Mean overhead of the combinator path over a direct implementation of the
/// same work, as a percentage, with its propagated error margin.
///
/// Overhead is `(mean_flow / mean_direct − 1) · 100`. The margin propagates
/// each side's standard error of the mean through the ratio:
/// `σ = 100 · (F/D) · √((σF/F)² + (σD/D)²)`.
pub fn overhead_pct(flow: &Timing, direct: &Timing) -> (f64, f64) {
    let ratio = flow.mean_s / direct.mean_s;
    let rel_f = flow.sem_s() / flow.mean_s;
    let rel_d = direct.sem_s() / direct.mean_s;
    let err = 100.0 * ratio * (rel_f * rel_f + rel_d * rel_d).sqrt();
    ((ratio - 1.0) * 100.0, err)
}

/// Runs `tasks` on a plain shared-queue thread pool with no combinator,
/// codec, or trace machinery — the baseline the flow path is compared
/// against. Results come back in task order.
///
/// # Panics
///
/// Panics if `workers` is 0 or a task panics.
pub fn direct_pool_dispatch<T, F>(workers: usize, tasks: &[F]) -> Vec<T>
where
    T: Send,
    F: Fn() -> T + Sync,
{
    assert!(workers >= 1, "a pool needs at least one worker");
    let cursor = AtomicUsize::new(0);
    let mut indexed: Vec<(usize, T)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers.min(tasks.len()))
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = cursor.fetch_add(1, Ordering::Relaxed);
                        if i >= tasks.len() {
                            return done;
                        }
                        done.push((i, tasks[i]()));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("direct dispatch task panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, v)| v).collect()
}

/// One CSV row of benchmark results.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Benchmark name (`rabin-miller`, `matmul`, `sudoku`).
    pub benchmark: String,
    /// Backend label (`seq`, `pool`, `simdist`).
    pub backend: String,
    /// Worker count of the backend under test.
    pub workers: usize,
    /// Number of parallel tasks the benchmark dispatched.
    pub tasks: usize,
    /// Timed repetitions.
    pub reps: usize,
    /// Mean seconds per repetition.
    pub mean_s: f64,
    /// Sample standard deviation in seconds.
    pub stddev_s: f64,
    /// Speedup vs the sequential backend; `None` where not applicable.
    pub speedup: Option<f64>,
    /// Overhead vs direct dispatch, percent; `None` where no direct
    /// baseline exists.
    pub overhead_pct: Option<f64>,
    /// Propagated error margin of the overhead, percent.
    pub overhead_err_pct: Option<f64>,
}

/// The exact column set, in order.
pub const CSV_HEADER: [&str; 10] = [
    "benchmark",
    "backend",
    "workers",
    "tasks",
    "reps",
    "mean_s",
    "stddev_s",
    "speedup",
    "overhead_pct",
    "overhead_err_pct",
];

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes reports as CSV with the standard header; absent values are empty
/// cells.
pub fn write_csv(mut w: impl Write, reports: &[BenchReport]) -> Result<(), MeasureError> {
    let mut csv = csv::Writer::from_writer(&mut w);
    csv.write_record(CSV_HEADER)?;
    for r in reports {
        csv.write_record([
            r.benchmark.clone(),
            r.backend.clone(),
            r.workers.to_string(),
            r.tasks.to_string(),
            r.reps.to_string(),
            format!("{:.6}", r.mean_s),
            format!("{:.6}", r.stddev_s),
            opt_cell(r.speedup),
            opt_cell(r.overhead_pct),
            opt_cell(r.overhead_err_pct),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
