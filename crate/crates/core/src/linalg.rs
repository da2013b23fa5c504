//! Dense least squares against a fixed tall design matrix.
//!
//! The thin SVD of `A` is computed once; every subsequent solve against a new
//! right-hand side costs `O(mn)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular value threshold below which a design matrix is treated as
/// rank deficient.
pub fn rank_tolerance(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * 16.0
}

/// Checks that `a` has full column rank, reporting the first offending
/// singular value otherwise.
pub fn check_full_column_rank(a: &DMatrix<f64>) -> Result<()> {
    let sv = a.singular_values();
    validate_singular_values(sv.as_slice(), a.nrows(), a.ncols())
}

fn validate_singular_values(sv: &[f64], rows: usize, cols: usize) -> Result<()> {
    let largest = sv.iter().cloned().fold(0.0_f64, f64::max);
    if largest == 0.0 || !largest.is_finite() {
        return Err(Error::RankDeficient {
            index: 0,
            value: largest,
            largest,
        });
    }
    let tol = rank_tolerance(rows, cols) * largest;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    for (rank, &i) in order.iter().enumerate() {
        if sv[i] <= tol {
            return Err(Error::RankDeficient {
                index: rank,
                value: sv[i],
                largest,
            });
        }
    }
    if sv.len() < cols {
        return Err(Error::RankDeficient {
            index: sv.len(),
            value: 0.0,
            largest,
        });
    }
    Ok(())
}

/// Pseudoinverse solver `b -> argmin ||b - A x||` for a fixed full-rank `A`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    u: DMatrix<f64>,
    // V * diag(1/sigma), n x n
    v_scaled: DMatrix<f64>,
    rows: usize,
}

impl LeastSquares {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = a.shape();
        if rows < cols {
            return Err(Error::invalid(format!(
                "least squares needs at least as many rows as columns, got {rows}x{cols}"
            )));
        }
        let svd = a.clone().svd(true, true);
        validate_singular_values(svd.singular_values.as_slice(), rows, cols)?;
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let mut v_scaled = v_t.transpose();
        for (j, s) in svd.singular_values.iter().enumerate() {
            v_scaled.column_mut(j).scale_mut(1.0 / s);
        }
        Ok(LeastSquares { u, v_scaled, rows })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn solve(&self, b: &[f64]) -> DVector<f64> {
        debug_assert_eq!(b.len(), self.rows);
        let b = DVector::from_column_slice(b);
        let proj = self.u.tr_mul(&b);
        &self.v_scaled * proj
    }
}

/// `A x` as a plain vector.
pub fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let x = DVector::from_column_slice(x);
    (a * x).as_slice().to_vec()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
