//! Row-compressed sparse matrices, sized for the assembly and flux operators
//! of this crate: duplicate triplets are summed on build, column indices are
//! sorted within each row.

use std::io::Write;

use crate::error::{Result, RpsError};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> CsrMatrix {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; nrows];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for r in 0..nrows {
            row_ptr[r + 1] = row_ptr[r] + row_counts[r];
        }
        CsrMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
    }

    /// y += A^T x
    pub fn transpose_matvec_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * xr;
            }
        }
    }

    /// Dot product of one row with a dense vector.
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().zip(vals).map(|(c, v)| v * x[*c]).sum()
    }

    /// Largest absolute asymmetry |A - A^T| relative to the largest entry.
    pub fn max_asymmetry(&self) -> f64 {
        let mut max_abs = 0.0f64;
        let mut max_diff = 0.0f64;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                max_abs = max_abs.max(v.abs());
                max_diff = max_diff.max((v - self.get(*c, r)).abs());
            }
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_diff / max_abs
        }
    }

    /// Symmetric restriction to the given index set (typically the interior
    /// nodes): keeps rows and columns listed in `keep`, renumbered in order.
    pub fn restrict(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.ncols.max(self.nrows)];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            let (cols, vals) = self.row(old_r);
            for (c, v) in cols.iter().zip(vals) {
                if map[*c] != usize::MAX {
                    triplets.push((new_r, map[*c], *v));
                }
            }
        }
        CsrMatrix::from_triplets(keep.len(), keep.len(), triplets)
    }

    /// Coordinate text export: one `row col value` line per entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {}", r, c, v)?;
            }
        }
        Ok(())
    }

    pub fn check_symmetric(&self, tol: f64, what: &'static str) -> Result<()> {
        let asym = self.max_asymmetry();
        if asym > tol {
            return Err(RpsError::Structure(format!(
                "{what}: relative asymmetry {asym:.3e} exceeds {tol:.1e}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let m = CsrMatrix::from_triplets(
            2,
            3,
            vec![(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, -1.0)],
        );
        assert_eq!(m.nnz(), 3);
        let (cols, vals) = m.row(0);
        assert_eq!(cols, &[0, 2]);
        assert_eq!(vals, &[2.0, 1.5]);
        assert_eq!(m.get(1, 1), -1.0);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn matvec_and_transpose() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]);
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 3.0]);
        let mut y = vec![0.0; 2];
        m.transpose_matvec_add(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![1.0, 5.0]);
    }

    #[test]
    fn restriction_renumbers() {
        let m = CsrMatrix::from_triplets(
            3,
            3,
            vec![(0, 0, 1.0), (0, 2, 2.0), (2, 0, 2.0), (2, 2, 4.0), (1, 1, 9.0)],
        );
        let r = m.restrict(&[0, 2]);
        assert_eq!(r.nrows(), 2);
        assert_eq!(r.get(0, 1), 2.0);
        assert_eq!(r.get(1, 1), 4.0);
        assert_eq!(r.max_asymmetry(), 0.0);
    }

    #[test]
    fn empty_rows_are_preserved() {
        let m = CsrMatrix::from_triplets(4, 4, vec![(3, 3, 1.0)]);
        assert_eq!(m.row(1).0.len(), 0);
        assert_eq!(m.matvec(&[1.0; 4]), vec![0.0, 0.0, 0.0, 1.0]);
    }
}
