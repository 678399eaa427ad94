use ndarray::Array2;

use crate::{Error, Result};

/// Sparse `n_rows x n_cols` matrix of positive integer counts.
///
/// Entries are stored twice: row-major (for per-instance access) and
/// column-major (for the per-feature instance lists that incremental
/// concept maintenance walks). Zeros are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    row_cols: Vec<u32>,
    row_vals: Vec<u32>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
    col_vals: Vec<u32>,
}

impl CountMatrix {
    /// Builds a matrix from `(row, col, count)` triplets in any order.
    ///
    /// Rejects out-of-range indices, zero counts and duplicate positions.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, u32)>,
    ) -> Result<Self> {
        for &(r, c, v) in &triplets {
            if r >= n_rows {
                return Err(Error::Bounds {
                    what: "row",
                    index: r,
                    bound: n_rows,
                });
            }
            if c >= n_cols {
                return Err(Error::Bounds {
                    what: "column",
                    index: c,
                    bound: n_cols,
                });
            }
            if v == 0 {
                return Err(Error::Format(format!("zero count stored at ({r}, {c})")));
            }
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = triplets
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::Format(format!(
                "duplicate entry at ({}, {})",
                w[0].0, w[0].1
            )));
        }

        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let row_cols = triplets.iter().map(|&(_, c, _)| c as u32).collect();
        let row_vals = triplets.iter().map(|&(_, _, v)| v).collect();

        let mut m = CountMatrix {
            n_rows,
            n_cols,
            row_ptr,
            row_cols,
            row_vals,
            col_ptr: Vec::new(),
            col_rows: Vec::new(),
            col_vals: Vec::new(),
        };
        m.build_column_index();
        m.check_consistency()?;
        Ok(m)
    }

    /// Builds from a dense row-major slice of counts.
    pub fn from_dense(n_rows: usize, n_cols: usize, values: &[u32]) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::Dimension(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                values.len()
            )));
        }
        let triplets = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(k, &v)| (k / n_cols, k % n_cols, v))
            .collect();
        Self::from_triplets(n_rows, n_cols, triplets)
    }

    fn build_column_index(&mut self) {
        let nnz = self.row_cols.len();
        let mut col_ptr = vec![0usize; self.n_cols + 1];
        for &c in &self.row_cols {
            col_ptr[c as usize + 1] += 1;
        }
        for c in 0..self.n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut col_rows = vec![0u32; nnz];
        let mut col_vals = vec![0u32; nnz];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.row_cols[k] as usize;
                col_rows[next[c]] = r as u32;
                col_vals[next[c]] = self.row_vals[k];
                next[c] += 1;
            }
        }
        self.col_ptr = col_ptr;
        self.col_rows = col_rows;
        self.col_vals = col_vals;
    }

    /// Verifies that the row-major entries and the column index describe the
    /// same matrix.
    pub fn check_consistency(&self) -> Result<()> {
        let nnz = self.row_cols.len();
        if self.row_ptr[self.n_rows] != nnz || self.col_ptr[self.n_cols] != nnz {
            return Err(Error::Format("row and column index sizes disagree".into()));
        }
        for c in 0..self.n_cols {
            let (rows, vals) = self.col(c);
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("column {c} rows not increasing")));
            }
            for (&r, &v) in rows.iter().zip(vals) {
                if self.get(r as usize, c) != v {
                    return Err(Error::Format(format!(
                        "column index disagrees with rows at ({r}, {c})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_cols.len()
    }

    /// Column indices and counts of row `r`, columns increasing.
    pub fn row(&self, r: usize) -> (&[u32], &[u32]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.row_cols[span.clone()], &self.row_vals[span])
    }

    /// Row indices and counts of column `c`, rows increasing.
    pub fn col(&self, c: usize) -> (&[u32], &[u32]) {
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        (&self.col_rows[span.clone()], &self.col_vals[span])
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0,
        }
    }

    /// Number of rows with a positive count in column `c`.
    pub fn doc_count(&self, c: usize) -> usize {
        self.col_ptr[c + 1] - self.col_ptr[c]
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CountMatrix {
        let triplets = rows
            .iter()
            .enumerate()
            .flat_map(|(new_r, &r)| {
                let (cols, vals) = self.row(r);
                cols.iter()
                    .zip(vals)
                    .map(move |(&c, &v)| (new_r, c as usize, v))
            })
            .collect();
        CountMatrix::from_triplets(rows.len(), self.n_cols, triplets)
            .expect("row selection of a valid matrix is valid")
    }

    /// New matrix holding the given columns, renumbered in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> CountMatrix {
        let triplets = cols
            .iter()
            .enumerate()
            .flat_map(|(new_c, &c)| {
                let (rows, vals) = self.col(c);
                rows.iter()
                    .zip(vals)
                    .map(move |(&r, &v)| (r as usize, new_c, v))
            })
            .collect();
        CountMatrix::from_triplets(self.n_rows, cols.len(), triplets)
            .expect("column selection of a valid matrix is valid")
    }

    /// Dense `rows.len() x n_cols` copy of the selected rows as reals.
    pub fn dense_rows(&self, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.n_cols));
        for (k, &r) in rows.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[[k, c as usize]] = v as f64;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn column_access_matches_rows() {
        let m = CountMatrix::from_triplets(3, 3, vec![(2, 0, 4), (0, 1, 2), (0, 0, 1), (1, 2, 3)])
            .unwrap();
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.col(0), (&[0u32, 2][..], &[1u32, 4][..]));
        assert_eq!(m.get(1, 2), 3);
        assert_eq!(m.get(1, 1), 0);
        assert_eq!(m.doc_count(0), 2);
    }

    #[test]
    fn rejects_duplicates_bounds_and_zeros() {
        assert!(matches!(
            CountMatrix::from_triplets(2, 2, vec![(0, 0, 1), (0, 0, 2)]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            CountMatrix::from_triplets(2, 2, vec![(0, 99, 1)]),
            Err(Error::Bounds { what: "column", .. })
        ));
        assert!(matches!(
            CountMatrix::from_triplets(2, 2, vec![(0, 1, 0)]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn selections_keep_entries() {
        let m = CountMatrix::from_dense(3, 3, &[1, 0, 2, 0, 3, 0, 4, 0, 5]).unwrap();
        let r = m.select_rows(&[2, 0]);
        assert_eq!(r.get(0, 2), 5);
        assert_eq!(r.get(1, 0), 1);
        let c = m.select_cols(&[2, 0]);
        assert_eq!(c.get(2, 0), 5);
        assert_eq!(c.get(2, 1), 4);
        assert_eq!(c.n_cols(), 2);
    }

    proptest! {
        #[test]
        fn dense_and_sparse_views_agree(
            rows in 1usize..8, cols in 1usize..8,
            seed in prop::collection::vec(0u32..4, 64)
        ) {
            let vals: Vec<u32> = seed.iter().cycle().take(rows * cols).copied().collect();
            let m = CountMatrix::from_dense(rows, cols, &vals).unwrap();
            let dense = m.dense_rows(&(0..rows).collect::<Vec<_>>());
            for r in 0..rows {
                for c in 0..cols {
                    prop_assert_eq!(m.get(r, c), vals[r * cols + c]);
                    prop_assert_eq!(dense[[r, c]], vals[r * cols + c] as f64);
                }
            }
            prop_assert!(m.check_consistency().is_ok());
        }
    }
}
