//! Multiple-shooting SQP with a Gauss–Newton Hessian. Each iteration
//! linearizes the RK4 steps, condenses the shooting defects into a dense QP
//! over the input increments, solves it with the box active-set method and
//! globalizes with an ℓ₁ merit line search.

use nalgebra::{DMatrix, DVector};

use super::qp::solve_box_qp;
use super::{MpcError, MpcProblem, MpcSolution};
use crate::dynamics::{rk4_step, rk4_step_with_jacobian};

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-7;

const ARMIJO: f64 = 1e-4;
const MAX_PENALTY_PASSES: usize = 20;
const MIN_STEP: f64 = 1.0 / 1048576.0;

struct Costing<'a> {
    p: &'a MpcProblem,
    /// Reference per stage, `k = 0..=N`.
    x_ref: Vec<Vec<f64>>,
    /// `γᵏ` for `k = 0..=N`.
    discount: Vec<f64>,
}

impl<'a> Costing<'a> {
    fn new(p: &'a MpcProblem, s_t: &[f64]) -> Self {
        let discount = (0..=p.horizon).map(|k| p.discount.powi(k as i32)).collect();
        Self { p, x_ref: p.references_at(s_t), discount }
    }

    fn bounds(&self, k: usize) -> (&[f64], &[f64]) {
        if k == self.p.horizon {
            (&self.p.x_lb_terminal, &self.p.x_ub_terminal)
        } else {
            (&self.p.x_lb, &self.p.x_ub)
        }
    }

    fn state_weights(&self, k: usize) -> &[f64] {
        if k == self.p.horizon {
            &self.p.q_terminal
        } else {
            &self.p.q
        }
    }

    /// Signed distance outside the box at stage `k` (zero inside).
    fn violation(&self, k: usize, i: usize, x: f64) -> f64 {
        let (lb, ub) = self.bounds(k);
        if x > ub[i] {
            x - ub[i]
        } else if x < lb[i] {
            x - lb[i]
        } else {
            0.0
        }
    }

    fn state_cost(&self, k: usize, x: &[f64]) -> f64 {
        let q = self.state_weights(k);
        let mut c = 0.0;
        for i in 0..x.len() {
            let e = x[i] - self.x_ref[k][i];
            c += self.discount[k] * q[i] * e * e;
        }
        c
    }

    fn penalty(&self, k: usize, x: &[f64]) -> f64 {
        if k == 0 {
            return 0.0;
        }
        (0..x.len()).map(|i| self.violation(k, i, x[i]).powi(2)).sum::<f64>() * self.p.state_penalty
    }

    fn input_cost(&self, k: usize, u: &[f64]) -> f64 {
        let mut c = 0.0;
        for j in 0..u.len() {
            let e = u[j] - self.p.u_ref[j];
            c += self.discount[k] * self.p.r[j] * e * e;
        }
        c
    }

    fn total(&self, xs: &[Vec<f64>], us: &[Vec<f64>]) -> f64 {
        let n = self.p.horizon;
        let mut c = 0.0;
        for k in 0..n {
            c += self.state_cost(k, &xs[k]) + self.input_cost(k, &us[k]) + self.penalty(k, &xs[k]);
        }
        c + self.state_cost(n, &xs[n]) + self.penalty(n, &xs[n])
    }

    /// Gradient of the stage-`k` state terms (cost and penalty).
    fn state_gradient(&self, k: usize, x: &[f64]) -> DVector<f64> {
        let q = self.state_weights(k);
        DVector::from_fn(x.len(), |i, _| {
            let mut g = 2.0 * self.discount[k] * q[i] * (x[i] - self.x_ref[k][i]);
            if k > 0 {
                g += 2.0 * self.p.state_penalty * self.violation(k, i, x[i]);
            }
            g
        })
    }

    /// Side of the box each stage state has left along `xs`.
    fn violated(&self, xs: &[DVector<f64>]) -> Vec<Vec<i8>> {
        xs.iter()
            .enumerate()
            .map(|(k, x)| {
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let d = if k == 0 { 0.0 } else { self.violation(k, i, v) };
                        (d > 0.0) as i8 - (d < 0.0) as i8
                    })
                    .collect()
            })
            .collect()
    }

    fn input_gradient(&self, k: usize, u: &[f64]) -> DVector<f64> {
        DVector::from_fn(u.len(), |j, _| 2.0 * self.discount[k] * self.p.r[j] * (u[j] - self.p.u_ref[j]))
    }
}

/// Linearized shooting intervals condensed onto the input increments:
/// `δx_k = G_k δu + c_k − x_k`.
struct Linearization {
    a: Vec<DMatrix<f64>>,
    defects: Vec<DVector<f64>>,
    /// `G_k` for `k = 0..=N`.
    sens: Vec<DMatrix<f64>>,
    /// States predicted by the linear model at zero increment.
    offset: Vec<DVector<f64>>,
}

fn linearize(p: &MpcProblem, xs: &[Vec<f64>], us: &[Vec<f64>]) -> Result<Linearization, MpcError> {
    let (n, nx, nu) = (p.horizon, p.n_states(), p.n_inputs());
    let nz = n * nu;
    let mut a = Vec::with_capacity(n);
    let mut defects = Vec::with_capacity(n);
    let mut sens = vec![DMatrix::zeros(nx, nz)];
    let mut shift = vec![DVector::zeros(nx)];
    let mut offset = vec![DVector::from_column_slice(&xs[0])];
    for k in 0..n {
        let (next, ak, bk) = rk4_step_with_jacobian(&p.model, &xs[k], &us[k], p.dt)?;
        let d = DVector::from_iterator(nx, next.iter().zip(&xs[k + 1]).map(|(f, x)| f - x));
        let mut g = &ak * &sens[k];
        g.view_mut((0, k * nu), (nx, nu)).copy_from(&bk);
        let h = &ak * &shift[k] + &d;
        offset.push(DVector::from_column_slice(&xs[k + 1]) + &h);
        sens.push(g);
        shift.push(h);
        a.push(ak);
        defects.push(d);
    }
    Ok(Linearization { a, defects, sens, offset })
}

/// Dense QP `min ½δuᵀHδu + gᵀδu` over input increments, with the box
/// `u_lb − u ≤ δu ≤ u_ub − u`.
#[derive(Clone, Debug)]
pub struct CondensedQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl CondensedQp {
    /// QP at the trajectory `(x_traj, u_traj)` when solving from `s_t`.
    pub fn assemble(
        p: &MpcProblem,
        s_t: &[f64],
        x_traj: &[Vec<f64>],
        u_traj: &[Vec<f64>],
    ) -> Result<Self, MpcError> {
        p.validate()?;
        let costing = Costing::new(p, s_t);
        let lin = linearize(p, x_traj, u_traj)?;
        let active = costing.violated(&lin.offset);
        Ok(assemble(&costing, &lin, u_traj, &active))
    }
}

/// `active[k][i]` switches on the penalty of state `i` at stage `k` against
/// its upper (`1`) or lower (`-1`) bound.
fn assemble(c: &Costing, lin: &Linearization, us: &[Vec<f64>], active: &[Vec<i8>]) -> CondensedQp {
    let p = c.p;
    let (n, nx, nu) = (p.horizon, p.n_states(), p.n_inputs());
    let nz = n * nu;
    let mut h = DMatrix::zeros(nz, nz);
    let mut g = DVector::zeros(nz);
    for k in 1..=n {
        let q = c.state_weights(k);
        let gk = &lin.sens[k];
        let xk = &lin.offset[k];
        let mut w = DVector::zeros(nx);
        let mut res = DVector::zeros(nx);
        for i in 0..nx {
            w[i] = c.discount[k] * q[i];
            res[i] = w[i] * (xk[i] - c.x_ref[k][i]);
            if active[k][i] != 0 {
                let (lb, ub) = c.bounds(k);
                let edge = if active[k][i] > 0 { ub[i] } else { lb[i] };
                w[i] += p.state_penalty;
                res[i] += p.state_penalty * (xk[i] - edge);
            }
        }
        let cols = k * nu;
        let gk = gk.columns(0, cols);
        let weighted = DMatrix::from_fn(nx, cols, |i, j| w[i] * gk[(i, j)]);
        let mut block = h.view_mut((0, 0), (cols, cols));
        block += gk.transpose() * weighted * 2.0;
        let mut gpart = g.rows_mut(0, cols);
        gpart += gk.transpose() * res * 2.0;
    }
    for k in 0..n {
        for j in 0..nu {
            let idx = k * nu + j;
            let w = c.discount[k] * p.r[j];
            h[(idx, idx)] += 2.0 * w;
            g[idx] += 2.0 * w * (us[k][j] - p.u_ref[j]);
        }
    }
    let mut lb = Vec::with_capacity(nz);
    let mut ub = Vec::with_capacity(nz);
    for u in us {
        for j in 0..nu {
            lb.push(p.u_lb[j] - u[j]);
            ub.push(p.u_ub[j] - u[j]);
        }
    }
    CondensedQp { hessian: h, gradient: g, lb, ub }
}

fn rollout(p: &MpcProblem, s_t: &[f64], us: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MpcError> {
    let mut xs = vec![s_t.to_vec()];
    for u in us {
        let next = rk4_step(&p.model, xs.last().expect("non-empty"), u, p.dt)?;
        xs.push(next);
    }
    Ok(xs)
}

/// Discount-weighted cost terms per stage along a given trajectory; the
/// last entry is the terminal term. State-box penalties are excluded.
pub fn stage_costs(p: &MpcProblem, s_t: &[f64], xs: &[Vec<f64>], us: &[Vec<f64>]) -> Vec<f64> {
    let c = Costing::new(p, s_t);
    let mut out: Vec<f64> = (0..p.horizon).map(|k| c.state_cost(k, &xs[k]) + c.input_cost(k, &us[k])).collect();
    out.push(c.state_cost(p.horizon, &xs[p.horizon]));
    out
}

/// Cost of the single-shooting rollout of `us` from `s_t`, penalties included.
pub fn trajectory_cost(p: &MpcProblem, s_t: &[f64], us: &[Vec<f64>]) -> Result<f64, MpcError> {
    let xs = rollout(p, s_t, us)?;
    Ok(Costing::new(p, s_t).total(&xs, us))
}

/// Gradient of [`trajectory_cost`] with respect to the stacked inputs, as
/// assembled by the SQP.
pub fn trajectory_gradient(p: &MpcProblem, s_t: &[f64], us: &[Vec<f64>]) -> Result<Vec<f64>, MpcError> {
    let xs = rollout(p, s_t, us)?;
    Ok(CondensedQp::assemble(p, s_t, &xs, us)?.gradient.iter().copied().collect())
}

fn check_inputs(p: &MpcProblem, s_t: &[f64]) -> Result<(), MpcError> {
    p.validate()?;
    if s_t.len() != p.n_states() {
        return Err(MpcError::Invalid(format!("state has {} entries, expected {}", s_t.len(), p.n_states())));
    }
    if s_t.iter().any(|v| !v.is_finite()) {
        return Err(MpcError::Invalid("state is not finite".into()));
    }
    Ok(())
}

fn clamp_inputs(p: &MpcProblem, u: &mut [f64]) {
    for (j, v) in u.iter_mut().enumerate() {
        *v = v.clamp(p.u_lb[j], p.u_ub[j]);
    }
}

/// Shifted previous solution, or zero inputs with their rollout.
fn initial_guess(p: &MpcProblem, s_t: &[f64], warm: Option<&MpcSolution>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (n, nx, nu) = (p.horizon, p.n_states(), p.n_inputs());
    let usable = warm.filter(|w| {
        w.u_traj.len() == n
            && w.x_traj.len() == n + 1
            && w.u_traj.iter().all(|u| u.len() == nu)
            && w.x_traj.iter().all(|x| x.len() == nx)
    });
    let mut us: Vec<Vec<f64>> = match usable {
        Some(w) => w.u_traj[1..].iter().chain(std::iter::once(&w.u_traj[n - 1])).cloned().collect(),
        None => vec![vec![0.0; nu]; n],
    };
    us.iter_mut().for_each(|u| clamp_inputs(p, u));
    let xs = match usable {
        Some(w) => {
            let mut xs = vec![s_t.to_vec()];
            xs.extend(w.x_traj[2..].iter().cloned());
            let last = rk4_step(&p.model, &w.x_traj[n], &us[n - 1], p.dt).unwrap_or_else(|_| w.x_traj[n].clone());
            xs.push(last);
            xs
        }
        None => {
            let mut xs = vec![s_t.to_vec()];
            for k in 0..n {
                let next = rk4_step(&p.model, &xs[k], &us[k], p.dt).unwrap_or_else(|_| xs[k].clone());
                xs.push(next);
            }
            xs
        }
    };
    (xs, us)
}

fn merit(c: &Costing, xs: &[Vec<f64>], us: &[Vec<f64>], rho: f64) -> f64 {
    let p = c.p;
    let mut infeasibility = 0.0;
    for k in 0..p.horizon {
        match rk4_step(&p.model, &xs[k], &us[k], p.dt) {
            Ok(next) => infeasibility += next.iter().zip(&xs[k + 1]).map(|(f, x)| (f - x).abs()).sum::<f64>(),
            Err(_) => return f64::INFINITY,
        }
    }
    let v = c.total(xs, us) + rho * infeasibility;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn amax(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves the problem from the measured state `s_t`, warm-started from the
/// shifted `warm_start` when given.
pub fn solve(p: &MpcProblem, s_t: &[f64], warm_start: Option<&MpcSolution>) -> Result<MpcSolution, MpcError> {
    check_inputs(p, s_t)?;
    let s_t = p.wrap_angles(s_t);
    let (n, nu) = (p.horizon, p.n_inputs());
    let costing = Costing::new(p, &s_t);
    let (mut xs, mut us) = initial_guess(p, &s_t, warm_start);
    let mut rho = 0.0f64;
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let lin = linearize(p, &xs, &us)?;
        let predict = |du: &DVector<f64>| -> Vec<DVector<f64>> { (0..=n).map(|k| &lin.sens[k] * du + &lin.offset[k]).collect() };
        // Semismooth Newton on the piecewise quadratic model: penalties switch
        // on where the predicted states leave their boxes, and each pass is
        // damped so the model decreases.
        let base = assemble(&costing, &lin, &us, &vec![vec![0; p.n_states()]; n + 1]);
        let model = |du: &DVector<f64>| -> f64 {
            let pred = predict(du);
            0.5 * du.dot(&(&base.hessian * du))
                + base.gradient.dot(du)
                + (1..=n).map(|k| costing.penalty(k, pred[k].as_slice())).sum::<f64>()
        };
        let mut du = DVector::zeros(n * nu);
        let mut active = costing.violated(&lin.offset);
        let mut value = model(&du);
        for _ in 0..MAX_PENALTY_PASSES {
            let qp = assemble(&costing, &lin, &us, &active);
            let direction = solve_box_qp(&qp.hessian, &qp.gradient, &qp.lb, &qp.ub)?.x - &du;
            let mut t = 1.0;
            let mut trial = &du + &direction;
            let mut trial_value = model(&trial);
            while trial_value > value && t > MIN_STEP {
                t *= 0.5;
                trial = &du + &direction * t;
                trial_value = model(&trial);
            }
            if trial_value > value {
                break;
            }
            let next = costing.violated(&predict(&trial));
            let done = t == 1.0 && next == active;
            du = trial;
            value = trial_value;
            active = next;
            if done {
                break;
            }
        }
        let dx: Vec<DVector<f64>> =
            predict(&du).into_iter().zip(&xs).map(|(x, x0)| x - DVector::from_column_slice(x0)).collect();
        if du.iter().chain(dx.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(MpcError::Divergence(iterations));
        }
        kkt = amax(du.iter().copied())
            .max(amax(dx.iter().flatten().copied()))
            .max(amax(lin.defects.iter().flatten().copied()));

        let step = |alpha: f64| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
            let xt = (0..=n)
                .map(|k| xs[k].iter().zip(dx[k].iter()).map(|(x, d)| x + alpha * d).collect())
                .collect();
            let ut = (0..n)
                .map(|k| {
                    let mut u: Vec<f64> = (0..nu).map(|j| us[k][j] + alpha * du[k * nu + j]).collect();
                    clamp_inputs(p, &mut u);
                    u
                })
                .collect();
            (xt, ut)
        };

        if kkt < TOLERANCE {
            (xs, us) = step(1.0);
            xs[0] = s_t.clone();
            converged = true;
            break;
        }

        // multipliers of the linearized dynamics at the full step
        let x_new: Vec<Vec<f64>> = (0..=n).map(|k| xs[k].iter().zip(dx[k].iter()).map(|(x, d)| x + d).collect()).collect();
        let mut lambda = costing.state_gradient(n, &x_new[n]);
        let mut lambda_max = amax(lambda.iter().copied());
        for k in (1..n).rev() {
            lambda = costing.state_gradient(k, &x_new[k]) + lin.a[k].transpose() * &lambda;
            lambda_max = lambda_max.max(amax(lambda.iter().copied()));
        }
        rho = rho.max(2.0 * lambda_max);

        let mut slope = 0.0;
        for k in 1..=n {
            slope += costing.state_gradient(k, &xs[k]).dot(&dx[k]);
        }
        for k in 0..n {
            slope += costing.input_gradient(k, &us[k]).dot(&du.rows(k * nu, nu));
        }
        slope -= rho * lin.defects.iter().map(|d| d.lp_norm(1)).sum::<f64>();

        let phi0 = merit(&costing, &xs, &us, rho);
        let mut alpha = 1.0;
        let accepted = loop {
            let (xt, ut) = step(alpha);
            let phi = merit(&costing, &xt, &ut, rho);
            // allow for rounding once the decrease reaches machine precision
            let target = if slope < 0.0 {
                phi0 + ARMIJO * alpha * slope + 1e-13 * phi0.abs()
            } else {
                phi0 + 1e-12 * (1.0 + phi0.abs())
            };
            if phi <= target {
                break Some((xt, ut));
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                break None;
            }
        };
        log::trace!("iteration {iterations}: kkt {kkt:e}, rho {rho:e}, slope {slope:e}, step {alpha}, merit {phi0:e}");
        match accepted {
            Some((xt, ut)) => {
                xs = xt;
                us = ut;
            }
            None => break,
        }
    }

    let objective = costing.total(&xs, &us);
    if !objective.is_finite() {
        return Err(MpcError::Divergence(iterations));
    }
    let max_state_violation = (1..=n)
        .flat_map(|k| (0..xs[k].len()).map(move |i| (k, i)))
        .map(|(k, i)| costing.violation(k, i, xs[k][i]).abs())
        .fold(0.0, f64::max);
    Ok(MpcSolution {
        u0: us[0].clone(),
        x_traj: xs,
        u_traj: us,
        objective,
        kkt_residual: kkt,
        iterations,
        converged,
        max_state_violation,
    })
}
