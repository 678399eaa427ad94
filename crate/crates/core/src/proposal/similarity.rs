use rayon::prelude::*;

use crate::data::CountMatrix;

/// Generalized Jaccard similarity between feature columns:
/// `J(i, k) = sum_n min(x_ni, x_nk) / sum_n max(x_ni, x_nk)`, with `0/0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityGraph {
    /// Computes the full `D x D` similarity matrix. With `binarize`, counts
    /// are clipped to 1 first (plain set Jaccard).
    pub fn build(x: &CountMatrix, binarize: bool) -> Self {
        let d = x.n_cols();
        let value = |v: u32| if binarize { 1u64 } else { v as u64 };
        let totals: Vec<u64> = (0..d).map(|c| x.col(c).1.iter().map(|&v| value(v)).sum()).collect();
        let rows: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|i| {
                let mut min_sum = vec![0u64; d];
                let (col_rows, col_vals) = x.col(i);
                for (&r, &vi) in col_rows.iter().zip(col_vals) {
                    let vi = value(vi);
                    let (cols, vals) = x.row(r as usize);
                    for (&k, &vk) in cols.iter().zip(vals) {
                        min_sum[k as usize] += vi.min(value(vk));
                    }
                }
                (0..d)
                    .map(|k| {
                        let max_sum = totals[i] + totals[k] - min_sum[k];
                        if max_sum == 0 {
                            0.0
                        } else {
                            min_sum[k] as f64 / max_sum as f64
                        }
                    })
                    .collect()
            })
            .collect();
        SimilarityGraph {
            n: d,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n + k]
    }
}
