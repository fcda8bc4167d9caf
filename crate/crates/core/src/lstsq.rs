//! Streaming linear least squares.
//!
//! Rows are folded into an upper-triangular factor with Givens rotations, so
//! memory is `O(p^2)` regardless of the number of rows. The reduced
//! `p x p` problem is solved through an SVD, which yields the minimum-norm
//! solution when the design is rank deficient.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquares {
    p: usize,
    /// Row-major `p x (p + 1)`: the triangular factor with `Q^T y` appended.
    r: Vec<f64>,
    rows: usize,
    /// Squared residual that no choice of coefficients can remove.
    base_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub coef: Vec<f64>,
    pub rank: usize,
    pub residual_ss: f64,
}

impl Solution {
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.coef.len()
    }
}

impl LeastSquares {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            r: vec![0.0; p * (p + 1)],
            rows: 0,
            base_residual: 0.0,
        }
    }

    pub fn num_cols(&self) -> usize {
        self.p
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        assert_eq!(x.len(), self.p, "row has wrong width");
        let w = self.p + 1;
        let mut row: Vec<f64> = x.iter().copied().chain(std::iter::once(y)).collect();
        self.rows += 1;
        for i in 0..self.p {
            if row[i] == 0.0 {
                continue;
            }
            let ri = &mut self.r[i * w..(i + 1) * w];
            let (a, b) = (ri[i], row[i]);
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for j in i..w {
                let (u, v) = (ri[j], row[j]);
                ri[j] = c * u + s * v;
                row[j] = c * v - s * u;
            }
            row[i] = 0.0;
        }
        self.base_residual += row[self.p] * row[self.p];
    }

    fn factor(&self, cols: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let w = self.p + 1;
        let m = DMatrix::from_fn(self.p, cols.len(), |i, j| self.r[i * w + cols[j]]);
        let c = DVector::from_fn(self.p, |i, _| self.r[i * w + self.p]);
        (m, c)
    }

    /// Minimum-norm least-squares fit on a subset of columns; the others stay 0.
    fn solve_subset(&self, cols: &[usize]) -> Solution {
        let (m, c) = self.factor(cols);
        let mut coef = vec![0.0; self.p];
        let mut rank = 0;
        let fitted = if cols.is_empty() {
            DVector::zeros(self.p)
        } else {
            let svd = m.clone().svd(true, true);
            let max_sv = svd.singular_values.max();
            let tol = (max_sv * RANK_TOL).max(f64::MIN_POSITIVE);
            rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
            let x = svd.solve(&c, tol).expect("both SVD factors were computed");
            for (k, &col) in cols.iter().enumerate() {
                coef[col] = x[k];
            }
            &m * x
        };
        let residual_ss = (c - fitted).norm_squared() + self.base_residual;
        Solution {
            coef,
            rank,
            residual_ss,
        }
    }

    pub fn solve(&self) -> Solution {
        let all: Vec<usize> = (0..self.p).collect();
        self.solve_subset(&all)
    }

    /// Least squares with `coef[j] >= 0` wherever `nonneg[j]`.
    ///
    /// Enumerates every support of the constrained columns; the optimum is the
    /// feasible unconstrained fit on its own support, so the best feasible
    /// candidate is exact. Intended for a handful of columns.
    pub fn solve_nonneg(&self, nonneg: &[bool]) -> Solution {
        assert_eq!(nonneg.len(), self.p);
        let constrained: Vec<usize> = (0..self.p).filter(|&j| nonneg[j]).collect();
        let free: Vec<usize> = (0..self.p).filter(|&j| !nonneg[j]).collect();
        let mut best: Option<Solution> = None;
        for mask in (0..1u32 << constrained.len()).rev() {
            let mut cols = free.clone();
            cols.extend(
                constrained
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask >> k & 1 == 1)
                    .map(|(_, &j)| j),
            );
            cols.sort_unstable();
            let sol = self.solve_subset(&cols);
            if constrained.iter().any(|&j| sol.coef[j] < 0.0) {
                continue;
            }
            if best
                .as_ref()
                .is_none_or(|b| sol.residual_ss < b.residual_ss * (1.0 - 1e-12))
            {
                best = Some(sol);
            }
        }
        best.expect("the all-zero support is always feasible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(rows: &[(&[f64], f64)]) -> Solution {
        let mut ls = LeastSquares::new(rows[0].0.len());
        for (x, y) in rows {
            ls.push(x, *y);
        }
        ls.solve()
    }

    #[test]
    fn exact_recovery() {
        let rows: Vec<([f64; 3], f64)> = [[1.0, 0.0, 0.5], [0.0, 1.0, 0.2], [0.3, 0.3, 1.0], [0.9, 0.1, 0.4]]
            .iter()
            .map(|x| (*x, 0.5 * x[0] + 0.5 * x[1]))
            .collect();
        let rows: Vec<(&[f64], f64)> = rows.iter().map(|(x, y)| (&x[..], *y)).collect();
        let s = fit(&rows);
        assert_eq!(s.rank, 3);
        for (c, e) in s.coef.iter().zip([0.5, 0.5, 0.0]) {
            assert!((c - e).abs() < 1e-12, "{:?}", s.coef);
        }
        assert!(s.residual_ss < 1e-24);
    }

    #[test]
    fn duplicated_rows_give_same_fit() {
        let base: [([f64; 2], f64); 3] = [([1.0, 0.0], 1.0), ([0.0, 1.0], 2.0), ([1.0, 1.0], 2.5)];
        let once: Vec<(&[f64], f64)> = base.iter().map(|(x, y)| (&x[..], *y)).collect();
        let many: Vec<(&[f64], f64)> = (0..10).flat_map(|_| once.iter().copied()).collect();
        let (a, b) = (fit(&once), fit(&many));
        for (x, y) in a.coef.iter().zip(&b.coef) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // Two identical columns: any split of the weight fits; min-norm splits evenly.
        let rows: [([f64; 2], f64); 3] = [([1.0, 1.0], 2.0), ([2.0, 2.0], 4.0), ([3.0, 3.0], 6.0)];
        let rows: Vec<(&[f64], f64)> = rows.iter().map(|(x, y)| (&x[..], *y)).collect();
        let s = fit(&rows);
        assert_eq!(s.rank, 1);
        assert!(s.is_rank_deficient());
        assert!((s.coef[0] - 1.0).abs() < 1e-10 && (s.coef[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nonneg_zeroes_negative_coefficient() {
        // y = x0 - 0.5 x1 exactly.
        let xs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]];
        let mut ls = LeastSquares::new(2);
        for x in &xs {
            ls.push(x, x[0] - 0.5 * x[1]);
        }
        assert!(ls.solve().coef[1] < 0.0);
        let s = ls.solve_nonneg(&[true, true]);
        assert_eq!(s.coef[1], 0.0);
        assert!(s.coef[0] > 0.0);
        let unconstrained = ls.solve_nonneg(&[false, false]);
        assert!((unconstrained.coef[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_system() {
        let ls = LeastSquares::new(2);
        let s = ls.solve();
        assert_eq!((s.coef, s.rank), (vec![0.0, 0.0], 0));
    }
}
