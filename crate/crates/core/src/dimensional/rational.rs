//! Exact Gaussian elimination over the rationals.

use num_rational::Rational64;
use num_traits::Zero;

pub type RationalMatrix = Vec<Vec<Rational64>>;

/// Reduced row echelon form. Returns the reduced matrix and the pivot
/// column of each non-zero row. Pivots are chosen as the first non-zero
/// entry scanning rows top-down, so the result is deterministic.
pub fn rref(mut m: RationalMatrix, n_cols: usize) -> (RationalMatrix, Vec<usize>) {
    let n_rows = m.len();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n_cols {
        if row == n_rows {
            break;
        }
        let Some(p) = (row..n_rows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(row, p);
        let pivot = m[row][col];
        for v in m[row].iter_mut() {
            *v /= pivot;
        }
        for r in 0..n_rows {
            if r != row && !m[r][col].is_zero() {
                let factor = m[r][col];
                let pivot_row = m[row].clone();
                for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    (m, pivots)
}

pub fn rank(m: &RationalMatrix, n_cols: usize) -> usize {
    rref(m.clone(), n_cols).1.len()
}

/// Solves `a x = b` exactly. Returns `None` when the system is inconsistent
/// or the solution is not unique.
pub fn solve_unique(a: &RationalMatrix, b: &[Rational64], n_cols: usize) -> Option<Vec<Rational64>> {
    let aug: RationalMatrix = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(*rhs);
            r
        })
        .collect();
    let (reduced, pivots) = rref(aug, n_cols + 1);
    if pivots.contains(&n_cols) || pivots.len() != n_cols {
        return None;
    }
    let mut x = vec![Rational64::zero(); n_cols];
    for (row, &col) in pivots.iter().enumerate() {
        x[col] = reduced[row][n_cols];
    }
    Some(x)
}
