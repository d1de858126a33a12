//! Block matrix multiplication on a torus of communicating workers.
//!
//! The classic systolic scheme: split both operands into a `s × s` grid of
//! blocks, give each torus node one block pair, and let blocks of the left
//! operand circulate horizontally while blocks of the right operand
//! circulate vertically. After `s` steps every node has seen exactly the
//! `s` block pairs whose products sum to its block of the result.
//!
//! For the sums to come out right, the grids need Cannon's initial
//! alignment: node `(r, c)` starts with `A[r][(c + r) mod s]` and
//! `B[(r + c) mod s][c]` rather than its own coordinates' blocks. Without
//! the skew, the pairs meeting at a node share no common inner index and
//! the result is wrong everywhere off the diagonal — the sequential oracle
//! in the tests is what catches that. Right-operand blocks travel
//! transposed so the inner product walks two rows, not a row and a column.
//!
//! Everything here works on plain integer matrices (`Vec<Vec<i64>>`);
//! [`seq_mat_mul`] is the O(n³) oracle the torus version must match
//! bit-exactly.

use flows::{torus, BackendConf, FlowError, StreamReceiver, StreamSender};
use thiserror::Error;

/// A dense row-major integer matrix.
pub type Matrix = Vec<Vec<i64>>;

/// A shape precondition failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DimensionError {
    /// A matrix had rows of differing lengths, or was not n×n.
    #[error("matrix is not square: {rows} rows but row {bad_row} has {bad_len} columns")]
    NotSquare {
        /// Total number of rows.
        rows: usize,
        /// Index of the first offending row.
        bad_row: usize,
        /// That row's length.
        bad_len: usize,
    },
    /// The two operands disagree in size.
    #[error("operand sizes differ: {left} vs {right}")]
    Mismatched {
        /// Dimension of the left operand.
        left: usize,
        /// Dimension of the right operand.
        right: usize,
    },
    /// The torus side must divide the matrix dimension.
    #[error("torus of side {torus} cannot tile a {dim}x{dim} matrix")]
    NotDivisible {
        /// Matrix dimension.
        dim: usize,
        /// Torus side length.
        torus: usize,
    },
    /// At least one core is required.
    #[error("at least one core is required")]
    NoCores,
}

/// Why a torus multiplication failed: bad shapes, or a backend failure.
#[derive(Debug, Error)]
pub enum MatmulError {
    /// A shape precondition failed.
    #[error(transparent)]
    Dimension(#[from] DimensionError),
    /// The torus evaluation itself failed.
    #[error(transparent)]
    Flow(#[from] FlowError),
}

fn check_square(m: &Matrix) -> Result<usize, DimensionError> {
    let rows = m.len();
    for (i, row) in m.iter().enumerate() {
        if row.len() != rows {
            return Err(DimensionError::NotSquare {
                rows,
                bad_row: i,
                bad_len: row.len(),
            });
        }
    }
    Ok(rows)
}

/// The O(n³) reference product.
pub fn seq_mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix, DimensionError> {
    let n = check_square(a)?;
    let bn = check_square(b)?;
    if n != bn {
        return Err(DimensionError::Mismatched { left: n, right: bn });
    }
    let bt = transpose(b.clone());
    Ok(a.iter()
        .map(|row| {
            bt.iter()
                .map(|col| row.iter().zip(col).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect())
}

/// Transposes a rectangular matrix.
pub fn transpose<T>(m: Vec<Vec<T>>) -> Vec<Vec<T>> {
    let cols = m.first().map_or(0, Vec::len);
    let mut iters: Vec<_> = m.into_iter().map(Vec::into_iter).collect();
    (0..cols)
        .map(|_| {
            iters
                .iter_mut()
                .map(|it| it.next().expect("transpose input is rectangular"))
                .collect()
        })
        .collect()
}

/// Splits a matrix into square blocks of side `block`, read row-major: the
/// result is a `(n/block) × (n/block)` grid where `grid[R][C]` holds rows
/// `R·block..` and columns `C·block..` of the original.
///
/// # Panics
///
/// Panics if `block` is 0 or does not divide the matrix dimension.
pub fn split_matrix(block: usize, m: &Matrix) -> Vec<Vec<Matrix>> {
    assert!(block >= 1, "blocks must have at least one row");
    assert!(
        m.len().is_multiple_of(block),
        "block side must divide the matrix dimension"
    );
    let grid_side = m.len() / block;
    (0..grid_side)
        .map(|gr| {
            (0..grid_side)
                .map(|gc| {
                    (0..block)
                        .map(|r| m[gr * block + r][gc * block..(gc + 1) * block].to_vec())
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Reassembles a grid of equally sized blocks into one matrix: the inverse
/// of [`split_matrix`].
pub fn combine(grid: Vec<Vec<Matrix>>) -> Matrix {
    grid.into_iter()
        .flat_map(|block_row| {
            block_row
                .into_iter()
                .fold(Vec::new(), |acc: Vec<Vec<i64>>, block| {
                    if acc.is_empty() {
                        block
                    } else {
                        acc.into_iter()
                            .zip(block)
                            .map(|(mut left, mut right)| {
                                left.append(&mut right);
                                left
                            })
                            .collect()
                    }
                })
        })
        .collect()
}

/// Multiplies `a` by the *transposed* right operand: `C[i][j] = Σ_k
/// a[i][k] · bt[j][k]`. Row-times-row keeps both walks cache-friendly.
fn pr_mm_tr(a: &Matrix, bt: &Matrix) -> Matrix {
    a.iter()
        .map(|row| {
            bt.iter()
                .map(|col| row.iter().zip(col).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect()
}

fn mat_add(mut acc: Matrix, other: &Matrix) -> Matrix {
    for (row, orow) in acc.iter_mut().zip(other) {
        for (x, y) in row.iter_mut().zip(orow) {
            *x += y;
        }
    }
    acc
}

/// Multiplies two square matrices on a torus of `⌊√num_cores⌋ ²` nodes.
///
/// Each node starts from its Cannon-aligned block pair, multiplies, then
/// `s − 1` times forwards its current blocks (right and down) and receives
/// fresh ones (from left and above), accumulating one block product per
/// step. Matches [`seq_mat_mul`] exactly.
pub fn gentleman_matmul(
    a: &Matrix,
    b: &Matrix,
    num_cores: usize,
    conf: &BackendConf,
) -> Result<Matrix, MatmulError> {
    if num_cores == 0 {
        return Err(DimensionError::NoCores.into());
    }
    let n = check_square(a)?;
    let bn = check_square(b)?;
    if n != bn {
        return Err(DimensionError::Mismatched { left: n, right: bn }.into());
    }
    let s = (num_cores as f64).sqrt().floor() as usize;
    if n % s != 0 {
        return Err(DimensionError::NotDivisible { dim: n, torus: s }.into());
    }

    let blocks_a = split_matrix(n / s, a);
    let blocks_b = split_matrix(n / s, b);

    // Cannon's alignment: shift row r of A left by r, column c of B up by
    // c, so the pair at (r, c) shares inner index (r + c) mod s at step 0
    // and keeps agreeing as blocks circulate.
    let grid: Vec<Vec<(Matrix, Matrix)>> = (0..s)
        .map(|r| {
            (0..s)
                .map(|c| {
                    let a_block = blocks_a[r][(c + r) % s].clone();
                    let bt_block = transpose(blocks_b[(r + c) % s][c].clone());
                    (a_block, bt_block)
                })
                .collect()
        })
        .collect();

    let node = move |(mut a_blk, mut bt_blk): (Matrix, Matrix),
                     from_left: &StreamReceiver<Matrix>,
                     from_above: &StreamReceiver<Matrix>,
                     to_right: &StreamSender<Matrix>,
                     to_below: &StreamSender<Matrix>|
          -> Result<Matrix, FlowError> {
        let mut acc = pr_mm_tr(&a_blk, &bt_blk);
        let closed = |context| FlowError::ChannelClosed { context };
        for _ in 1..s {
            to_right.send(a_blk)?;
            to_below.send(bt_blk)?;
            a_blk = from_left.recv()?.ok_or(closed("torus row ended early"))?;
            bt_blk = from_above.recv()?.ok_or(closed("torus column ended early"))?;
            acc = mat_add(acc, &pr_mm_tr(&a_blk, &bt_blk));
        }
        Ok(acc)
    };

    let result_grid = torus(conf, node).run(grid)?;
    Ok(combine(result_grid))
}

/// A deterministic pseudo-random matrix with entries in `[-99, 99]`, for
/// benchmarking and oracle checks.
pub fn random_matrix(dim: usize, seed: u64) -> Matrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| (0..dim).map(|_| rng.random_range(-99..=99)).collect())
        .collect()
}

/// The n×n identity matrix.
pub fn identity_matrix(dim: usize) -> Matrix {
    (0..dim)
        .map(|r| (0..dim).map(|c| i64::from(r == c)).collect())
        .collect()
}
