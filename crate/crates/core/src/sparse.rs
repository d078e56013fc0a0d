//! Minimal triplet-based sparse storage.
//!
//! The systems handled here are desk scale (tens of states), so every solver
//! converts to dense before factorizing. The triplet form keeps assembly
//! cheap and records block structure explicitly.

use nalgebra::DMatrix;

/// Sparse matrix in triplet (COO) form. Duplicate entries add.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBlock {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseBlock {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols, "entry out of bounds");
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Add this block into `target` with its top-left corner at (row0, col0).
    pub fn add_into(&self, target: &mut DMatrix<f64>, row0: usize, col0: usize) {
        for &(r, c, v) in &self.entries {
            target[(row0 + r, col0 + c)] += v;
        }
    }

    /// Add `scale` times this block into `target` at (row0, col0).
    pub fn add_scaled_into(&self, target: &mut DMatrix<f64>, row0: usize, col0: usize, scale: f64) {
        for &(r, c, v) in &self.entries {
            target[(row0 + r, col0 + c)] += scale * v;
        }
    }

    /// Triplet text dump (row col value per line), for offline inspection.
    pub fn dump_triplets(&self) -> String {
        let mut out = String::new();
        for &(r, c, v) in &self.entries {
            out.push_str(&format!("{} {} {:.16e}\n", r, c, v));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_add() {
        let mut b = SparseBlock::new(2, 2);
        b.push(0, 1, 2.0);
        b.push(0, 1, 3.0);
        let d = b.to_dense();
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 0)], 0.0);
    }

    #[test]
    fn zero_entries_skipped() {
        let mut b = SparseBlock::new(1, 1);
        b.push(0, 0, 0.0);
        assert!(b.is_empty());
    }

    #[test]
    fn add_into_offsets() {
        let mut b = SparseBlock::new(1, 1);
        b.push(0, 0, 4.0);
        let mut m = DMatrix::zeros(3, 3);
        b.add_into(&mut m, 2, 1);
        assert_eq!(m[(2, 1)], 4.0);
    }
}
