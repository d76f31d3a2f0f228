//! Heatmap peak decoding: 3x3 max-pool suppression followed by a strict
//! score threshold.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{Cell, GroundGrid, Subcell};
use crate::{Error, Result};

/// Default decode threshold.
pub const DEFAULT_THETA: f64 = 0.5;

/// Occupancy heatmap over the ground grid, with optional sub-cell offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    /// `2 × rows × cols`: row offsets then column offsets.
    offsets: Option<Vec<f64>>,
    pub frame_index: i64,
}

impl Heatmap {
    pub fn new(
        rows: usize,
        cols: usize,
        scores: Vec<f64>,
        offsets: Option<Vec<f64>>,
        frame_index: i64,
    ) -> Result<Self> {
        if scores.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "heatmap scores",
                expected: rows * cols,
                got: scores.len(),
            });
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidConfig("heatmap scores must lie in [0, 1]"));
        }
        if let Some(off) = &offsets {
            if off.len() != 2 * rows * cols {
                return Err(Error::DimensionMismatch {
                    what: "heatmap offsets",
                    expected: 2 * rows * cols,
                    got: off.len(),
                });
            }
            if off.iter().any(|o| !(0.0..1.0).contains(o)) {
                return Err(Error::InvalidConfig("heatmap offsets must lie in [0, 1)"));
            }
        }
        Ok(Self {
            rows,
            cols,
            scores,
            offsets,
            frame_index,
        })
    }

    pub fn zeros(rows: usize, cols: usize, frame_index: i64) -> Self {
        Self {
            rows,
            cols,
            scores: vec![0.0; rows * cols],
            offsets: None,
            frame_index,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn offsets(&self) -> Option<&[f64]> {
        self.offsets.as_deref()
    }

    #[inline]
    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols + col]
    }

    /// Sets a score; values are clamped to `[0, 1]`.
    pub fn set_score(&mut self, row: usize, col: usize, score: f64) {
        self.scores[row * self.cols + col] = score.clamp(0.0, 1.0);
    }

    /// Sets the sub-cell offset of a cell, allocating the offset planes on
    /// first use.
    pub fn set_offset(&mut self, row: usize, col: usize, subcell: Subcell) {
        let plane = self.rows * self.cols;
        let off = self.offsets.get_or_insert_with(|| vec![0.0; 2 * plane]);
        let idx = row * self.cols + col;
        off[idx] = subcell.drow.clamp(0.0, 1.0 - f64::EPSILON);
        off[plane + idx] = subcell.dcol.clamp(0.0, 1.0 - f64::EPSILON);
    }

    pub fn subcell(&self, row: usize, col: usize) -> Subcell {
        match &self.offsets {
            Some(off) => {
                let idx = row * self.cols + col;
                Subcell::new(off[idx], off[self.rows * self.cols + idx])
            }
            None => Subcell::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub cell: Cell,
    pub subcell: Subcell,
    pub score: f64,
    pub frame_index: i64,
}

impl Detection {
    /// Ground position in meters.
    pub fn position(&self, grid: &GroundGrid) -> (f64, f64) {
        grid.position(self.cell, self.subcell)
    }
}

/// Decodes peaks above `theta`.
///
/// A cell survives when it equals the maximum of its 3x3 neighborhood and its
/// score is strictly greater than `theta`. Of each 8-connected plateau of
/// equal surviving scores only the lexicographically smallest cell is kept.
/// Output is sorted by descending score, ties by `(row, col)`.
pub fn decode(h: &Heatmap, theta: f64) -> Vec<Detection> {
    let (rows, cols) = (h.rows, h.cols);
    let mut peak = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let s = h.score(r, c);
            if s > theta && is_local_max(h, r, c) {
                peak[r * cols + c] = true;
            }
        }
    }

    // Row-major scan visits the smallest cell of every plateau first; flood
    // the rest of the plateau out of the peak mask.
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if !peak[r * cols + c] {
                continue;
            }
            let s = h.score(r, c);
            out.push(Detection {
                cell: Cell::new(r, c),
                subcell: h.subcell(r, c),
                score: s,
                frame_index: h.frame_index,
            });
            peak[r * cols + c] = false;
            stack.push((r, c));
            while let Some((pr, pc)) = stack.pop() {
                for (nr, nc) in neighbors(rows, cols, pr, pc) {
                    let idx = nr * cols + nc;
                    if peak[idx] && h.score(nr, nc) == s {
                        peak[idx] = false;
                        stack.push((nr, nc));
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.cell.cmp(&b.cell))
    });
    out
}

fn is_local_max(h: &Heatmap, r: usize, c: usize) -> bool {
    let s = h.score(r, c);
    neighbors(h.rows, h.cols, r, c).all(|(nr, nc)| h.score(nr, nc) <= s)
}

fn neighbors(rows: usize, cols: usize, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
    let r0 = r.saturating_sub(1);
    let c0 = c.saturating_sub(1);
    let r1 = (r + 1).min(rows - 1);
    let c1 = (c + 1).min(cols - 1);
    (r0..=r1)
        .flat_map(move |nr| (c0..=c1).map(move |nc| (nr, nc)))
        .filter(move |&(nr, nc)| (nr, nc) != (r, c))
}
