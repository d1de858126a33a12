//! Batch Sudoku solving: an embarrassingly parallel pile of independent
//! puzzles, one backtracking search each.
//!
//! Puzzles arrive as 81-character lines (row-major, `.` or `0` for blanks)
//! and are solved by constraint-tracked backtracking: three 9-bit masks per
//! house (row, column, box) make candidate lookup a couple of bit
//! operations, and the search always branches on the most constrained empty
//! cell. [`sudoku_batch`] maps the solver over a whole batch with
//! [`par_map`]; order is preserved and unsolvable puzzles yield `None`
//! rather than failing the batch.

use flows::{lift, par_map, BackendConf, FlowError};
use thiserror::Error;

/// One puzzle or solution: 81 cells row-major, values 0–9, 0 meaning blank.
pub type Grid = Vec<u8>;

/// A puzzle line that is not a valid grid.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("puzzle on line {line} is malformed: {reason}")]
pub struct MalformedPuzzle {
    /// 1-based line number in the input.
    pub line: usize,
    /// What was wrong with it.
    pub reason: String,
}

/// Parses one puzzle per line; blank lines are skipped. Cells are `1`–`9`,
/// with `.` or `0` for blanks.
pub fn parse_puzzles(text: &str) -> Result<Vec<Grid>, MalformedPuzzle> {
    let mut puzzles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.chars().count() != 81 {
            return Err(MalformedPuzzle {
                line: i + 1,
                reason: format!("expected 81 cells, found {}", line.chars().count()),
            });
        }
        let mut grid = Vec::with_capacity(81);
        for ch in line.chars() {
            match ch {
                '.' | '0' => grid.push(0),
                '1'..='9' => grid.push(ch as u8 - b'0'),
                other => {
                    return Err(MalformedPuzzle {
                        line: i + 1,
                        reason: format!("invalid cell {other:?}"),
                    })
                }
            }
        }
        puzzles.push(grid);
    }
    Ok(puzzles)
}

/// Renders a grid back to its 81-character line form (blanks as `.`).
pub fn render(grid: &Grid) -> String {
    grid.iter()
        .map(|&d| if d == 0 { '.' } else { (b'0' + d) as char })
        .collect()
}

const BOX_OF: fn(usize) -> usize = |cell| (cell / 27) * 3 + (cell % 9) / 3;

struct Board {
    cells: [u8; 81],
    rows: [u16; 9],
    cols: [u16; 9],
    boxes: [u16; 9],
}

impl Board {
    /// Builds the constraint masks; `None` if the givens already conflict.
    fn new(grid: &Grid) -> Option<Board> {
        let mut board = Board {
            cells: [0; 81],
            rows: [0; 9],
            cols: [0; 9],
            boxes: [0; 9],
        };
        for (cell, &digit) in grid.iter().enumerate() {
            if digit != 0 && !board.place(cell, digit) {
                return None;
            }
        }
        Some(board)
    }

    fn place(&mut self, cell: usize, digit: u8) -> bool {
        let bit = 1u16 << digit;
        let (r, c, b) = (cell / 9, cell % 9, BOX_OF(cell));
        if self.rows[r] & bit != 0 || self.cols[c] & bit != 0 || self.boxes[b] & bit != 0 {
            return false;
        }
        self.cells[cell] = digit;
        self.rows[r] |= bit;
        self.cols[c] |= bit;
        self.boxes[b] |= bit;
        true
    }

    fn unplace(&mut self, cell: usize) {
        let bit = 1u16 << self.cells[cell];
        let (r, c, b) = (cell / 9, cell % 9, BOX_OF(cell));
        self.cells[cell] = 0;
        self.rows[r] &= !bit;
        self.cols[c] &= !bit;
        self.boxes[b] &= !bit;
    }

    fn candidates(&self, cell: usize) -> u16 {
        let used = self.rows[cell / 9] | self.cols[cell % 9] | self.boxes[BOX_OF(cell)];
        !used & 0b11_1111_1110
    }

    /// The empty cell with the fewest candidates, if any cell is empty.
    fn most_constrained(&self) -> Option<(usize, u16)> {
        let mut best: Option<(usize, u16, u32)> = None;
        for cell in 0..81 {
            if self.cells[cell] == 0 {
                let cands = self.candidates(cell);
                let count = cands.count_ones();
                if count <= 1 {
                    return Some((cell, cands));
                }
                if best.is_none_or(|(_, _, c)| count < c) {
                    best = Some((cell, cands, count));
                }
            }
        }
        best.map(|(cell, cands, _)| (cell, cands))
    }

    fn solve(&mut self) -> bool {
        let Some((cell, mut cands)) = self.most_constrained() else {
            return true; // No empty cells left.
        };
        while cands != 0 {
            let digit = cands.trailing_zeros() as u8;
            cands &= cands - 1;
            // place() cannot fail here — the candidate mask is the
            // constraint set — but stays the single mutation point.
            self.place(cell, digit);
            if self.solve() {
                return true;
            }
            self.unplace(cell);
        }
        false
    }
}

/// Solves one puzzle; `None` if it is contradictory or unsolvable.
pub fn solve(grid: &Grid) -> Option<Grid> {
    let mut board = Board::new(grid)?;
    if board.solve() {
        Some(board.cells.to_vec())
    } else {
        None
    }
}

/// Solves a batch of puzzles in parallel, preserving order; unsolvable
/// puzzles come back as `None`.
pub fn sudoku_batch(
    puzzles: Vec<Grid>,
    conf: &BackendConf,
) -> Result<Vec<Option<Grid>>, FlowError> {
    par_map(conf, lift(|grid: Grid| solve(&grid))).run(puzzles)
}
