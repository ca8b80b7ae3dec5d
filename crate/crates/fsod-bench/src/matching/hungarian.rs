//! Minimum-cost assignment on rectangular cost matrices.

use crate::error::{Error, Result};

/// Rectangular cost matrix, rows = predictions, cols = ground truths.
/// All entries must be finite and non-negative.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidCostMatrix {
                reason: format!(
                    "expected {} entries for {rows}x{cols}, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        if let Some(bad) = data.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidCostMatrix {
                reason: format!("entry {bad} is not a finite non-negative cost"),
            });
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidCostMatrix {
                reason: "ragged rows".into(),
            });
        }
        CostMatrix::new(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// One-to-one assignment of rows to columns, sorted by row index.
/// Contains exactly `min(rows, cols)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn total_cost(&self, c: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, j)| c.get(r, j)).sum()
    }
}

/// Minimum-cost assignment via the Hungarian algorithm with potentials,
/// O(n^3). Rectangular inputs are padded to square with a cost strictly
/// larger than any real entry; padded pairs are discarded, so the output
/// holds exactly min(rows, cols) pairs. Column scans run in index order,
/// which makes tie-breaking deterministic (lowest index wins).
pub fn hungarian(c: &CostMatrix) -> Assignment {
    if c.rows() == 0 || c.cols() == 0 {
        return Assignment { pairs: Vec::new() };
    }
    let n = c.rows().max(c.cols());
    let pad = c.data.iter().cloned().fold(0.0_f64, f64::max) + 1.0;
    let cost = |r: usize, j: usize| -> f64 {
        if r < c.rows() && j < c.cols() {
            c.get(r, j)
        } else {
            pad
        }
    };

    // 1-indexed arrays with a phantom column 0 used as the augmenting root.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut col_row = vec![0usize; n + 1]; // row assigned to each column, 0 = none
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < min_to[j] {
                        min_to[j] = cur;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        // walk the augmenting path back to the root
        while j0 != 0 {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let r = col_row[j];
            (r >= 1 && r - 1 < c.rows() && j - 1 < c.cols()).then_some((r - 1, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    debug_assert_eq!(pairs.len(), c.rows().min(c.cols()));
    Assignment { pairs }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_off_diagonal() {
        // permutations: (0,0)+(1,1)=7 vs (0,1)+(1,0)=3
        let c = CostMatrix::from_rows(&[vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total_cost(&c), 3.0);
    }

    #[test]
    fn zero_diagonal() {
        let c = CostMatrix::from_rows(&[vec![0.0, 9.0], vec![9.0, 0.0]]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&c), 0.0);
    }

    #[test]
    fn single_row_picks_minimum() {
        let c = CostMatrix::from_rows(&[vec![5.0, 2.0, 7.0]]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.pairs, vec![(0, 1)]);
    }

    #[test]
    fn empty_matrix_is_empty_assignment() {
        let c = CostMatrix::new(0, 3, vec![]).unwrap();
        assert!(hungarian(&c).pairs.is_empty());
        let c = CostMatrix::new(2, 0, vec![]).unwrap();
        assert!(hungarian(&c).pairs.is_empty());
    }

    #[test]
    fn rectangular_pair_count() {
        let c = CostMatrix::from_rows(&[
            vec![3.0, 1.0],
            vec![2.0, 8.0],
            vec![4.0, 4.0],
            vec![0.5, 9.0],
        ])
        .unwrap();
        let a = hungarian(&c);
        assert_eq!(a.pairs.len(), 2);
        assert_eq!(a.total_cost(&c), brute::min_cost(&c));
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(CostMatrix::from_rows(&[vec![1.0, f64::NAN]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![1.0, -0.5]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    // Integer-valued entries keep every partial sum exact in f64, so the
    // equality below is meaningful.
    fn random_int_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CostMatrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0..100) as f64).collect();
        CostMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let rows = rng.gen_range(1..=6);
            let cols = rng.gen_range(1..=6);
            let c = random_int_matrix(&mut rng, rows, cols);
            let a = hungarian(&c);
            assert_eq!(a.pairs.len(), rows.min(cols));
            assert_eq!(a.total_cost(&c), brute::min_cost(&c), "matrix {c:?}");
        }
    }

    #[test]
    fn row_constant_shift_preserves_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 40 {
            let n = rng.gen_range(2..=5);
            let c = random_int_matrix(&mut rng, n, n);
            let opt = brute::min_cost(&c);
            if brute::count_optima(&c, opt) != 1 {
                continue; // only unique optima make the pairing comparable
            }
            let base = hungarian(&c);
            let row = rng.gen_range(0..n);
            let shift = rng.gen_range(1..50) as f64;
            let shifted_rows: Vec<Vec<f64>> = (0..n)
                .map(|r| {
                    (0..n)
                        .map(|j| c.get(r, j) + if r == row { shift } else { 0.0 })
                        .collect()
                })
                .collect();
            let shifted = CostMatrix::from_rows(&shifted_rows).unwrap();
            let moved = hungarian(&shifted);
            assert_eq!(base.pairs, moved.pairs);
            assert_eq!(moved.total_cost(&shifted), base.total_cost(&c) + shift);
            checked += 1;
        }
    }
}
