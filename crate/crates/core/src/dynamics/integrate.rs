use nalgebra::DMatrix;
use serde::Serialize;

use super::model::OdeModel;
use super::DynamicsError;

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// Classical fourth-order Runge–Kutta step with the input held constant.
pub fn rk4_step(model: &OdeModel, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let k1 = model.rhs(x, u)?;
    let k2 = model.rhs(&axpy(x, 0.5 * dt, &k1), u)?;
    let k3 = model.rhs(&axpy(x, 0.5 * dt, &k2), u)?;
    let k4 = model.rhs(&axpy(x, dt, &k3), u)?;
    let next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite { state: x.to_vec() });
    }
    Ok(next)
}

/// One RK4 step together with its exact Jacobians `(∂x⁺/∂x, ∂x⁺/∂u)`,
/// obtained by differentiating through the four stages.
pub fn rk4_step_with_jacobian(
    model: &OdeModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>), DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let nx = x.len();
    let nu = u.len();
    let eye = DMatrix::<f64>::identity(nx, nx);

    let k1 = model.rhs(x, u)?;
    let (a1, b1) = model.jacobian(x, u)?;

    let x2 = axpy(x, 0.5 * dt, &k1);
    let k2 = model.rhs(&x2, u)?;
    let (fx2, fu2) = model.jacobian(&x2, u)?;
    let a2 = &fx2 * (&eye + &a1 * (0.5 * dt));
    let b2 = &fx2 * (&b1 * (0.5 * dt)) + &fu2;

    let x3 = axpy(x, 0.5 * dt, &k2);
    let k3 = model.rhs(&x3, u)?;
    let (fx3, fu3) = model.jacobian(&x3, u)?;
    let a3 = &fx3 * (&eye + &a2 * (0.5 * dt));
    let b3 = &fx3 * (&b2 * (0.5 * dt)) + &fu3;

    let x4 = axpy(x, dt, &k3);
    let k4 = model.rhs(&x4, u)?;
    let (fx4, fu4) = model.jacobian(&x4, u)?;
    let a4 = &fx4 * (&eye + &a3 * dt);
    let b4 = &fx4 * (&b3 * dt) + &fu4;

    let next: Vec<f64> = (0..nx)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite { state: x.to_vec() });
    }
    let a = eye + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
    let b = (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (dt / 6.0);
    debug_assert_eq!(b.shape(), (nx, nu));
    Ok((next, a, b))
}

/// Closed-loop rollout with zero-order hold on the input.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    /// `n_steps + 1` states.
    pub states: Vec<Vec<f64>>,
    /// `n_steps` inputs.
    pub inputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn state_matrix(&self) -> DMatrix<f64> {
        let nx = self.states[0].len();
        DMatrix::from_fn(self.states.len(), nx, |i, j| self.states[i][j])
    }
}

/// Simulates `n_steps` steps of `dt` applying `policy` at every sample.
pub fn simulate<P, E>(
    model: &OdeModel,
    mut policy: P,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory, DynamicsError>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>, E>,
    E: std::fmt::Display,
{
    if n_steps == 0 {
        return Err(DynamicsError::InvalidHorizon);
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut inputs = Vec::with_capacity(n_steps);
    states.push(x0.to_vec());
    for step in 0..n_steps {
        let x = states.last().expect("non-empty");
        let u = policy(x).map_err(|e| DynamicsError::Policy { step, message: e.to_string() })?;
        let next = rk4_step(model, x, &u, dt).map_err(|e| DynamicsError::AtStep { step, source: Box::new(e) })?;
        inputs.push(u);
        states.push(next);
    }
    Ok(Trajectory { dt, states, inputs })
}
