//! Discounted nonlinear MPC on RK4-discretized models, solved by a
//! multiple-shooting Gauss–Newton SQP, and its dimensionless counterpart.

mod builders;
pub mod qp;
mod sqp;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builders::{
    build_cartpole_problem, build_racecar_delta_u_problem, cartpole_dimensionless_dt, racecar_dimensionless_dt,
    CARTPOLE_HORIZON, DEFAULT_CARTPOLE_WEIGHTS, DEFAULT_RACECAR_WEIGHTS, RACECAR_HORIZON, RACECAR_LOOKAHEAD,
};
pub use sqp::{solve, stage_costs, trajectory_cost, trajectory_gradient, CondensedQp, MAX_ITERATIONS, TOLERANCE};

use crate::dimensional::DimensionVector;
use crate::dynamics::{nondimensionalize_ode, rebuild_model, DynamicsError, ModelSource, OdeModel, ScalingTransform};
use crate::dimensional::QuantitySet;

/// Weight on squared state-box violations.
pub const STATE_PENALTY: f64 = 1e5;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid MPC problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("cost carries units but no cost scaling was given")]
    Unit,
    #[error("scaling does not fit the problem: {0}")]
    Scaling(String),
    #[error("QP subproblem failed: {0}")]
    Qp(String),
    #[error("SQP diverged at iteration {0}")]
    Divergence(usize),
    #[error("solver failed at dimensionless state {state:?}: {source}")]
    AtState { state: Vec<f64>, source: Box<MpcError> },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Reference entry `state` ramps from its measured value to `offset` ahead
/// over the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lookahead {
    pub state: usize,
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightBlock {
    Stage,
    Input,
    Terminal,
    /// Same entry of the stage and terminal weights.
    Shared,
}

/// One diagonal weight entry exposed for tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunableWeight {
    pub name: String,
    pub block: WeightBlock,
    pub index: usize,
}

/// `min γᴺ T(x_N) + Σ γᵏ L(x_k, u_k)` with
/// `L = (x−x_ref)ᵀQ(x−x_ref) + (u−u_ref)ᵀR(u−u_ref)`, `T` likewise with
/// `Q_N`, subject to `x_0 = s_t`, RK4 dynamics over `dt`, hard input boxes
/// and penalized state boxes.
#[derive(Clone, Debug)]
pub struct MpcProblem {
    pub horizon: usize,
    pub discount: f64,
    pub dt: f64,
    pub model: OdeModel,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub q_terminal: Vec<f64>,
    pub x_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub x_lb: Vec<f64>,
    pub x_ub: Vec<f64>,
    pub u_lb: Vec<f64>,
    pub u_ub: Vec<f64>,
    pub x_lb_terminal: Vec<f64>,
    pub x_ub_terminal: Vec<f64>,
    pub lookahead: Option<Lookahead>,
    /// Angles wrapped to `(−π, π]` before solving.
    pub angle_states: Vec<usize>,
    pub state_penalty: f64,
    pub cost_dim: DimensionVector,
    pub tunable: Vec<TunableWeight>,
    /// Scaling that carries this problem to its dimensionless form.
    pub scaling: Option<ScalingTransform>,
}

impl MpcProblem {
    /// Unconstrained problem with unit weights and zero references.
    pub fn new(model: OdeModel, horizon: usize, dt: f64) -> Self {
        let (nx, nu) = (model.n_states(), model.n_inputs());
        let n_dims = model.params.dimensions().len();
        Self {
            horizon,
            discount: 1.0,
            dt,
            model,
            q: vec![1.0; nx],
            r: vec![1.0; nu],
            q_terminal: vec![1.0; nx],
            x_ref: vec![0.0; nx],
            u_ref: vec![0.0; nu],
            x_lb: vec![f64::NEG_INFINITY; nx],
            x_ub: vec![f64::INFINITY; nx],
            u_lb: vec![f64::NEG_INFINITY; nu],
            u_ub: vec![f64::INFINITY; nu],
            x_lb_terminal: vec![f64::NEG_INFINITY; nx],
            x_ub_terminal: vec![f64::INFINITY; nx],
            lookahead: None,
            angle_states: Vec::new(),
            state_penalty: STATE_PENALTY,
            cost_dim: DimensionVector::dimensionless(n_dims),
            tunable: Vec::new(),
            scaling: None,
        }
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    pub fn n_inputs(&self) -> usize {
        self.model.n_inputs()
    }

    pub fn with_weights(mut self, q: Vec<f64>, r: Vec<f64>, q_terminal: Vec<f64>) -> Self {
        self.q = q;
        self.r = r;
        self.q_terminal = q_terminal;
        self
    }

    pub fn with_reference(mut self, x_ref: Vec<f64>, u_ref: Vec<f64>) -> Self {
        self.x_ref = x_ref;
        self.u_ref = u_ref;
        self
    }

    pub fn with_state_bounds(mut self, lb: Vec<f64>, ub: Vec<f64>) -> Self {
        self.x_lb = lb;
        self.x_ub = ub;
        self
    }

    pub fn with_terminal_bounds(mut self, lb: Vec<f64>, ub: Vec<f64>) -> Self {
        self.x_lb_terminal = lb;
        self.x_ub_terminal = ub;
        self
    }

    pub fn with_input_bounds(mut self, lb: Vec<f64>, ub: Vec<f64>) -> Self {
        self.u_lb = lb;
        self.u_ub = ub;
        self
    }

    pub fn with_discount(mut self, gamma: f64) -> Self {
        self.discount = gamma;
        self
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let (nx, nu) = (self.n_states(), self.n_inputs());
        let bad = |m: &str| Err(MpcError::Invalid(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least one step");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("sampling time must be positive");
        }
        for (name, v, n) in [
            ("q", &self.q, nx),
            ("q_terminal", &self.q_terminal, nx),
            ("x_ref", &self.x_ref, nx),
            ("x_lb", &self.x_lb, nx),
            ("x_ub", &self.x_ub, nx),
            ("x_lb_terminal", &self.x_lb_terminal, nx),
            ("x_ub_terminal", &self.x_ub_terminal, nx),
            ("r", &self.r, nu),
            ("u_ref", &self.u_ref, nu),
            ("u_lb", &self.u_lb, nu),
            ("u_ub", &self.u_ub, nu),
        ] {
            if v.len() != n {
                return Err(MpcError::Invalid(format!("`{name}` has {} entries, expected {n}", v.len())));
            }
        }
        if self.q.iter().chain(&self.q_terminal).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("state weights must be finite and non-negative");
        }
        if self.r.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return bad("input weights must be finite and positive");
        }
        if self.x_ref.iter().chain(&self.u_ref).any(|v| !v.is_finite()) {
            return bad("references must be finite");
        }
        for (lb, ub) in [(&self.x_lb, &self.x_ub), (&self.u_lb, &self.u_ub), (&self.x_lb_terminal, &self.x_ub_terminal)] {
            if lb.iter().zip(ub.iter()).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
                return bad("lower bound exceeds upper bound");
            }
        }
        if !(self.state_penalty > 0.0 && self.state_penalty.is_finite()) {
            return bad("state penalty must be positive");
        }
        if let Some(l) = self.lookahead {
            if l.state >= nx || !l.offset.is_finite() {
                return bad("lookahead refers to a missing state");
            }
        }
        if self.angle_states.iter().any(|&i| i >= nx) {
            return bad("angle index out of range");
        }
        for t in &self.tunable {
            let len = match t.block {
                WeightBlock::Stage | WeightBlock::Terminal | WeightBlock::Shared => nx,
                WeightBlock::Input => nu,
            };
            if t.index >= len {
                return Err(MpcError::Invalid(format!("tunable weight `{}` is out of range", t.name)));
            }
        }
        Ok(())
    }

    pub fn tunable_values(&self) -> Vec<f64> {
        self.tunable
            .iter()
            .map(|t| match t.block {
                WeightBlock::Stage | WeightBlock::Shared => self.q[t.index],
                WeightBlock::Input => self.r[t.index],
                WeightBlock::Terminal => self.q_terminal[t.index],
            })
            .collect()
    }

    pub fn set_tunable(&mut self, values: &[f64]) -> Result<(), MpcError> {
        if values.len() != self.tunable.len() {
            return Err(MpcError::Invalid(format!(
                "{} tunable values for {} weights",
                values.len(),
                self.tunable.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(MpcError::Invalid("weights must be finite and non-negative".into()));
        }
        for (t, &v) in self.tunable.iter().zip(values) {
            match t.block {
                WeightBlock::Stage => self.q[t.index] = v,
                WeightBlock::Input => self.r[t.index] = v,
                WeightBlock::Terminal => self.q_terminal[t.index] = v,
                WeightBlock::Shared => {
                    self.q[t.index] = v;
                    self.q_terminal[t.index] = v;
                }
            }
        }
        Ok(())
    }

    /// Per-stage references when solving from `state`; a lookahead entry
    /// ramps from the current value to `offset` ahead at the horizon end.
    pub(crate) fn references_at(&self, state: &[f64]) -> Vec<Vec<f64>> {
        let n = self.horizon;
        (0..=n)
            .map(|k| {
                let mut r = self.x_ref.clone();
                if let Some(l) = self.lookahead {
                    r[l.state] = state[l.state] + l.offset * k as f64 / n as f64;
                }
                r
            })
            .collect()
    }

    pub(crate) fn wrap_angles(&self, state: &[f64]) -> Vec<f64> {
        let mut s = state.to_vec();
        for &i in &self.angle_states {
            s[i] = wrap_angle(s[i]);
        }
        s
    }

    pub fn to_file(&self) -> ProblemFile {
        ProblemFile {
            horizon: self.horizon,
            discount: self.discount,
            dt: self.dt,
            model: self.model.source.clone(),
            params: self.model.params.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
            q_terminal: self.q_terminal.clone(),
            x_ref: self.x_ref.clone(),
            u_ref: self.u_ref.clone(),
            x_lb: self.x_lb.iter().map(|v| finite(*v)).collect(),
            x_ub: self.x_ub.iter().map(|v| finite(*v)).collect(),
            u_lb: self.u_lb.iter().map(|v| finite(*v)).collect(),
            u_ub: self.u_ub.iter().map(|v| finite(*v)).collect(),
            x_lb_terminal: self.x_lb_terminal.iter().map(|v| finite(*v)).collect(),
            x_ub_terminal: self.x_ub_terminal.iter().map(|v| finite(*v)).collect(),
            lookahead: self.lookahead,
            angle_states: self.angle_states.clone(),
            state_penalty: self.state_penalty,
            cost_dim: self.cost_dim.exponents().iter().map(|e| crate::dimensional::format_rational(e)).collect(),
            tunable: self.tunable.clone(),
            scaling: self.scaling.clone(),
        }
    }

    pub fn from_file(file: &ProblemFile) -> Result<Self, MpcError> {
        let model = rebuild_model(&file.model, &file.params)?;
        let lower = |v: &[Option<f64>]| v.iter().map(|b| b.unwrap_or(f64::NEG_INFINITY)).collect::<Vec<_>>();
        let upper = |v: &[Option<f64>]| v.iter().map(|b| b.unwrap_or(f64::INFINITY)).collect::<Vec<_>>();
        let cost_dim = file
            .cost_dim
            .iter()
            .map(|s| crate::dimensional::parse_rational(s).ok_or_else(|| MpcError::Invalid(format!("bad exponent `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let p = Self {
            horizon: file.horizon,
            discount: file.discount,
            dt: file.dt,
            model,
            q: file.q.clone(),
            r: file.r.clone(),
            q_terminal: file.q_terminal.clone(),
            x_ref: file.x_ref.clone(),
            u_ref: file.u_ref.clone(),
            x_lb: lower(&file.x_lb),
            x_ub: upper(&file.x_ub),
            u_lb: lower(&file.u_lb),
            u_ub: upper(&file.u_ub),
            x_lb_terminal: lower(&file.x_lb_terminal),
            x_ub_terminal: upper(&file.x_ub_terminal),
            lookahead: file.lookahead,
            angle_states: file.angle_states.clone(),
            state_penalty: file.state_penalty,
            cost_dim: DimensionVector::new(cost_dim),
            tunable: file.tunable.clone(),
            scaling: file.scaling.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String, MpcError> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self, MpcError> {
        Self::from_file(&serde_json::from_str(text)?)
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// On-disk form of an [`MpcProblem`]; unbounded entries are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub horizon: usize,
    pub discount: f64,
    pub dt: f64,
    pub model: ModelSource,
    pub params: QuantitySet,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub q_terminal: Vec<f64>,
    pub x_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub x_lb: Vec<Option<f64>>,
    pub x_ub: Vec<Option<f64>>,
    pub u_lb: Vec<Option<f64>>,
    pub u_ub: Vec<Option<f64>>,
    pub x_lb_terminal: Vec<Option<f64>>,
    pub x_ub_terminal: Vec<Option<f64>>,
    #[serde(default)]
    pub lookahead: Option<Lookahead>,
    #[serde(default)]
    pub angle_states: Vec<usize>,
    pub state_penalty: f64,
    pub cost_dim: Vec<String>,
    #[serde(default)]
    pub tunable: Vec<TunableWeight>,
    #[serde(default)]
    pub scaling: Option<ScalingTransform>,
}

/// Result of one MPC solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    /// `N + 1` predicted states, starting at the measured state.
    pub x_traj: Vec<Vec<f64>>,
    pub u_traj: Vec<Vec<f64>>,
    pub u0: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest state-box violation along the prediction.
    pub max_state_violation: f64,
}

/// Dimensionless problem: RK4 model of `f̃` over `Δt/m_t`,
/// `Q̃ = M_xQM_x/m_L`, `R̃ = M_uRM_u/m_L`, `Q̃_N = M_xQ_NM_x/m_T`,
/// references and boxes divided by the matching scaling entries.
pub fn nondimensionalize_mpc(problem: &MpcProblem, scaling: &ScalingTransform) -> Result<MpcProblem, MpcError> {
    problem.validate()?;
    let (nx, nu) = (problem.n_states(), problem.n_inputs());
    if scaling.m_x.len() != nx || scaling.m_u.len() != nu {
        return Err(MpcError::Scaling(format!(
            "expected {nx} state and {nu} input entries, got {} and {}",
            scaling.m_x.len(),
            scaling.m_u.len()
        )));
    }
    scaling.validate()?;
    if !problem.cost_dim.is_dimensionless() && scaling.m_stage == 1.0 && scaling.m_terminal == 1.0 {
        return Err(MpcError::Unit);
    }
    let div = |v: &[f64], m: &[f64]| v.iter().zip(m).map(|(a, s)| a / s).collect::<Vec<_>>();
    let weigh = |w: &[f64], m: &[f64], unit: f64| w.iter().zip(m).map(|(a, s)| a * s * s / unit).collect::<Vec<_>>();
    let (mx, mu) = (&scaling.m_x, &scaling.m_u);
    Ok(MpcProblem {
        horizon: problem.horizon,
        discount: problem.discount,
        dt: scaling.dimensionless_dt(problem.dt),
        model: nondimensionalize_ode(&problem.model, scaling)?,
        q: weigh(&problem.q, mx, scaling.m_stage),
        r: weigh(&problem.r, mu, scaling.m_stage),
        q_terminal: weigh(&problem.q_terminal, mx, scaling.m_terminal),
        x_ref: div(&problem.x_ref, mx),
        u_ref: div(&problem.u_ref, mu),
        x_lb: div(&problem.x_lb, mx),
        x_ub: div(&problem.x_ub, mx),
        u_lb: div(&problem.u_lb, mu),
        u_ub: div(&problem.u_ub, mu),
        x_lb_terminal: div(&problem.x_lb_terminal, mx),
        x_ub_terminal: div(&problem.x_ub_terminal, mx),
        lookahead: problem.lookahead.map(|l| Lookahead { state: l.state, offset: l.offset / mx[l.state] }),
        angle_states: problem.angle_states.clone(),
        state_penalty: problem.state_penalty,
        cost_dim: DimensionVector::dimensionless(problem.cost_dim.len()),
        tunable: problem.tunable.clone(),
        scaling: None,
    })
}

/// Receding-horizon controller acting on physical states through a
/// dimensionless problem. Not reentrant: each call shifts the stored
/// solution to warm-start the next one.
#[derive(Clone, Debug)]
pub struct MpcController {
    problem: MpcProblem,
    scaling: ScalingTransform,
    previous: Option<MpcSolution>,
}

impl MpcController {
    pub fn new(dproblem: MpcProblem, scaling: ScalingTransform) -> Result<Self, MpcError> {
        dproblem.validate()?;
        if scaling.m_x.len() != dproblem.n_states() || scaling.m_u.len() != dproblem.n_inputs() {
            return Err(MpcError::Scaling("scaling size differs from the problem".into()));
        }
        scaling.validate()?;
        Ok(Self { problem: dproblem, scaling, previous: None })
    }

    pub fn problem(&self) -> &MpcProblem {
        &self.problem
    }

    pub fn scaling(&self) -> &ScalingTransform {
        &self.scaling
    }

    pub fn last_solution(&self) -> Option<&MpcSolution> {
        self.previous.as_ref()
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// `ũ₀` at the dimensionless state `s̃`.
    pub fn step_dimensionless(&mut self, s: &[f64]) -> Result<Vec<f64>, MpcError> {
        let sol = solve(&self.problem, s, self.previous.as_ref())
            .map_err(|e| MpcError::AtState { state: s.to_vec(), source: Box::new(e) })?;
        if !sol.converged {
            log::debug!("SQP stopped after {} iterations, residual {:e}", sol.iterations, sol.kkt_residual);
        }
        let u0 = sol.u0.clone();
        self.previous = Some(sol);
        Ok(u0)
    }

    /// `M_u ũ₀(M_x⁻¹ s)`.
    pub fn step(&mut self, s: &[f64]) -> Result<Vec<f64>, MpcError> {
        let st = self.scaling.to_dimensionless_state(s);
        let u = self.step_dimensionless(&st)?;
        Ok(self.scaling.to_physical_input(&u))
    }
}

/// Physical-state policy backed by the dimensionless problem.
pub fn dimensionless_policy(
    dproblem: MpcProblem,
    scaling: ScalingTransform,
) -> Result<impl FnMut(&[f64]) -> Result<Vec<f64>, MpcError>, MpcError> {
    let mut controller = MpcController::new(dproblem, scaling)?;
    Ok(move |s: &[f64]| controller.step(s))
}

#[cfg(test)]
mod tests;
