//! Primal active-set method for `min ½xᵀHx + gᵀx` subject to `lb ≤ x ≤ ub`.

use nalgebra::{DMatrix, DVector};

use super::MpcError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

#[derive(Clone, Debug)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// `-1` at the lower bound, `1` at the upper bound, `0` free.
    pub active: Vec<i8>,
}

fn solve_free(h: &DMatrix<f64>, rhs: &DVector<f64>, free: &[usize]) -> Result<DVector<f64>, MpcError> {
    let n = free.len();
    let sub = DMatrix::from_fn(n, n, |i, j| h[(free[i], free[j])]);
    let b = DVector::from_fn(n, |i, _| rhs[free[i]]);
    if let Some(chol) = sub.clone().cholesky() {
        return Ok(chol.solve(&b));
    }
    let shift = 1e-10 * sub.diagonal().amax().max(1.0);
    let reg = &sub + DMatrix::identity(n, n) * shift;
    reg.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| MpcError::Qp("reduced Hessian is not positive definite".into()))
}

/// Starts from the projection of zero onto the box. Ties in the blocking
/// and release rules go to the lowest index.
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lb: &[f64],
    ub: &[f64],
) -> Result<BoxQpSolution, MpcError> {
    let n = g.len();
    if h.shape() != (n, n) || lb.len() != n || ub.len() != n {
        return Err(MpcError::Qp("inconsistent problem sizes".into()));
    }
    if lb.iter().zip(ub).any(|(l, u)| !(l <= u)) {
        return Err(MpcError::Qp("empty box".into()));
    }
    let mut x = DVector::from_fn(n, |i, _| 0.0f64.clamp(lb[i], ub[i]));
    let mut set: Vec<Bound> = (0..n)
        .map(|i| {
            if x[i] == lb[i] && lb[i].is_finite() {
                Bound::Lower
            } else if x[i] == ub[i] && ub[i].is_finite() {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    let scale = h.amax().max(g.amax()).max(1.0);
    let mut at_subspace_min = false;
    let max_iter = 50 * (n + 1);
    for iteration in 0..max_iter {
        let grad = h * &x + g;
        if !at_subspace_min {
            let free: Vec<usize> = (0..n).filter(|&i| set[i] == Bound::Free).collect();
            let p_free = if free.is_empty() { DVector::zeros(0) } else { solve_free(h, &(-&grad), &free)? };
            if p_free.iter().any(|v| !v.is_finite()) {
                return Err(MpcError::Qp("non-finite step".into()));
            }
            let mut alpha = 1.0;
            let mut block = None;
            for (k, &i) in free.iter().enumerate() {
                let p = p_free[k];
                let limit = if p < 0.0 {
                    (lb[i] - x[i]) / p
                } else if p > 0.0 {
                    (ub[i] - x[i]) / p
                } else {
                    continue;
                };
                if limit < alpha {
                    alpha = limit.max(0.0);
                    block = Some((i, p < 0.0));
                }
            }
            for (k, &i) in free.iter().enumerate() {
                x[i] += alpha * p_free[k];
            }
            match block {
                Some((i, lower)) => {
                    x[i] = if lower { lb[i] } else { ub[i] };
                    set[i] = if lower { Bound::Lower } else { Bound::Upper };
                }
                None => at_subspace_min = true,
            }
            continue;
        }
        // stationary on the working set: check multiplier signs
        let mut release = None;
        let mut worst = 1e-13 * scale;
        for i in 0..n {
            if lb[i] == ub[i] {
                continue;
            }
            let violation = match set[i] {
                Bound::Lower => -grad[i],
                Bound::Upper => grad[i],
                Bound::Free => continue,
            };
            if violation > worst {
                worst = violation;
                release = Some(i);
            }
        }
        match release {
            Some(i) => {
                set[i] = Bound::Free;
                at_subspace_min = false;
            }
            None => {
                let active = set
                    .iter()
                    .map(|b| match b {
                        Bound::Free => 0,
                        Bound::Lower => -1,
                        Bound::Upper => 1,
                    })
                    .collect();
                return Ok(BoxQpSolution { x, iterations: iteration + 1, active });
            }
        }
    }
    Err(MpcError::Qp(format!("active set did not settle in {max_iter} iterations")))
}
