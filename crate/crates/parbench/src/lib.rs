//! Benchmark workloads for the [`flows`] combinator library, plus the
//! measurement harness behind the `parbench` binary.
//!
//! Three workloads with very different parallel shape:
//!
//! - [`rabin_miller`](rabin_miller::rabin_miller) — many independent
//!   arbitrary-precision subtests, farmed out and reduced to one verdict.
//! - [`gentleman_matmul`](matmul::gentleman_matmul) — block matrix
//!   multiplication on a torus whose nodes stream blocks to their
//!   neighbors.
//! - [`sudoku_batch`](sudoku::sudoku_batch) — a plain parallel map over
//!   independent backtracking searches.
//!
//! Every workload has a sequential oracle it must match exactly; the
//! [`measure`] module contributes warm-up/repetition timing, speedup and
//! overhead statistics, and the CSV report format.

#![warn(missing_docs)]

pub mod matmul;
pub mod measure;
pub mod rabin_miller;
pub mod sudoku;

pub use matmul::{
    combine, gentleman_matmul, identity_matrix, random_matrix, seq_mat_mul, split_matrix,
    transpose, DimensionError, MatmulError, Matrix,
};
pub use measure::{
    direct_pool_dispatch, overhead_pct, speedup, time_reps, write_csv, BenchReport, MeasureError,
    Timing, CSV_HEADER,
};
pub use rabin_miller::{
    first_primes, mersenne, rabin_miller, rabin_miller_seq, BaseChecker, InvalidInput, RabinError,
    Verdict,
};
pub use sudoku::{parse_puzzles, render, solve, sudoku_batch, Grid, MalformedPuzzle};
