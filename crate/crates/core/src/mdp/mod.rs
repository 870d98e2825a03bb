//! Discrete-time MDPs built on sampled ODE models, their dimensionless
//! counterparts, and closed-loop objective evaluation.

mod gaussian;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gaussian::{transform_gaussian, GaussianDisturbance};

use crate::dimensional::{pi_distance, scaling_factor, DimensionVector, DimensionalError};
use crate::dynamics::{nondimensionalize_ode, rk4_step, scaling_for, DynamicsError, OdeModel, ScalingTransform};

/// Samples per state/action dimension used by [`check_similarity`].
pub const SIMILARITY_SAMPLES_PER_DIM: usize = 64;
pub const DEFAULT_SIMILARITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Dimensional(#[from] DimensionalError),
    #[error("scaling does not fit the MDP: {0}")]
    Scaling(String),
    #[error("covariance is not symmetric positive semidefinite: {0}")]
    Covariance(String),
    #[error("MDPs are not comparable: {0}")]
    Incomparable(String),
    #[error("invalid MDP: {0}")]
    Invalid(String),
    #[error("episode failed at step {step}: {message}")]
    Episode { step: usize, message: String },
}

/// Axis-aligned box; infinite bounds mean "unbounded".
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, MdpError> {
        if lower.len() != upper.len() {
            return Err(MdpError::Invalid("bound vectors differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return Err(MdpError::Invalid("lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Bounds divided by the positive diagonal `m`.
    pub fn scaled_down(&self, m: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().zip(m).map(|(v, s)| v / s).collect(),
            upper: self.upper.iter().zip(m).map(|(v, s)| v / s).collect(),
        }
    }
}

pub type StageCost = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// `s⁺ = F(s, a) + d` with `F` one RK4 step of `model` over `dt` and `d` an
/// optional additive Gaussian disturbance in state units.
#[derive(Clone)]
pub struct MdpInstance {
    pub model: OdeModel,
    pub dt: f64,
    pub state_space: BoxSpace,
    pub action_space: BoxSpace,
    pub disturbance: Option<GaussianDisturbance>,
    pub stage_cost: StageCost,
    /// Unit of the stage cost.
    pub cost_dim: DimensionVector,
    pub discount: f64,
}

impl fmt::Debug for MdpInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MdpInstance")
            .field("model", &self.model)
            .field("dt", &self.dt)
            .field("state_space", &self.state_space)
            .field("action_space", &self.action_space)
            .field("disturbance", &self.disturbance)
            .field("discount", &self.discount)
            .finish()
    }
}

impl MdpInstance {
    pub fn new(
        model: OdeModel,
        dt: f64,
        state_space: BoxSpace,
        action_space: BoxSpace,
        stage_cost: StageCost,
        cost_dim: DimensionVector,
        discount: f64,
    ) -> Result<Self, MdpError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(MdpError::Invalid(format!("sampling time {dt} must be positive")));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(MdpError::Invalid(format!("discount {discount} outside [0, 1]")));
        }
        if state_space.len() != model.n_states() || action_space.len() != model.n_inputs() {
            return Err(MdpError::Invalid("space sizes do not match the model".into()));
        }
        if cost_dim.len() != model.params.dimensions().len() {
            return Err(MdpError::Invalid("cost unit uses a different dimension basis".into()));
        }
        Ok(Self { model, dt, state_space, action_space, disturbance: None, stage_cost, cost_dim, discount })
    }

    pub fn with_disturbance(mut self, disturbance: GaussianDisturbance) -> Result<Self, MdpError> {
        if disturbance.mean.len() != self.model.n_states() {
            return Err(MdpError::Invalid("disturbance size differs from the state size".into()));
        }
        gaussian::check_psd(&disturbance.cov)?;
        self.disturbance = Some(disturbance);
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.model.n_inputs()
    }

    /// Deterministic part of the transition.
    pub fn step(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>, MdpError> {
        Ok(rk4_step(&self.model, s, a, self.dt)?)
    }

    pub fn transition(&self, s: &[f64], a: &[f64], d: Option<&[f64]>) -> Result<Vec<f64>, MdpError> {
        let mut next = self.step(s, a)?;
        if let Some(d) = d {
            next.iter_mut().zip(d).for_each(|(x, di)| *x += di);
        }
        Ok(next)
    }

    pub fn cost(&self, s: &[f64], a: &[f64]) -> f64 {
        (self.stage_cost)(s, a)
    }

    /// Scaling built from the model's unit signatures; the disturbance shares
    /// the state scaling and the cost unit comes from `cost_dim`.
    pub fn scaling(&self) -> Result<ScalingTransform, MdpError> {
        let s = scaling_for(&self.model)?;
        let m_cost = scaling_factor(&self.cost_dim, &self.model.params)?;
        let m_d = s.m_x.clone();
        Ok(ScalingTransform { m_cost, ..s }.with_disturbance(m_d))
    }
}

/// Dimensionless MDP: `s̃ = M_s⁻¹s`, `ã = M_a⁻¹a`, `Δt̃ = Δt/m_t`,
/// `𝓛̃(s̃, ã) = 𝓛(M_s s̃, M_a ã)/m_𝓛`; the discount is unchanged.
pub fn nondimensionalize_mdp(mdp: &MdpInstance, scaling: &ScalingTransform) -> Result<MdpInstance, MdpError> {
    let (nx, nu) = (mdp.n_states(), mdp.n_actions());
    if scaling.m_x.len() != nx || scaling.m_u.len() != nu {
        return Err(MdpError::Scaling(format!(
            "expected {nx} state and {nu} action entries, got {} and {}",
            scaling.m_x.len(),
            scaling.m_u.len()
        )));
    }
    let m_d = scaling.m_d.clone().unwrap_or_else(|| scaling.m_x.clone());
    if m_d.len() != nx {
        return Err(MdpError::Scaling("disturbance scaling size differs from the state size".into()));
    }
    scaling.validate()?;

    let model = nondimensionalize_ode(&mdp.model, scaling)?;
    let disturbance = match &mdp.disturbance {
        Some(g) => {
            let (mean, cov) = transform_gaussian(&g.mean, &g.cov, &m_d)?;
            Some(GaussianDisturbance { mean, cov })
        }
        None => None,
    };
    let base = mdp.stage_cost.clone();
    let (m_x, m_u, m_cost) = (scaling.m_x.clone(), scaling.m_u.clone(), scaling.m_cost);
    let stage_cost: StageCost = Arc::new(move |s: &[f64], a: &[f64]| {
        let sp: Vec<f64> = s.iter().zip(&m_x).map(|(v, m)| v * m).collect();
        let ap: Vec<f64> = a.iter().zip(&m_u).map(|(v, m)| v * m).collect();
        base(&sp, &ap) / m_cost
    });
    Ok(MdpInstance {
        model,
        dt: scaling.dimensionless_dt(mdp.dt),
        state_space: mdp.state_space.scaled_down(&scaling.m_x),
        action_space: mdp.action_space.scaled_down(&scaling.m_u),
        disturbance,
        stage_cost,
        cost_dim: DimensionVector::dimensionless(mdp.cost_dim.len()),
        discount: mdp.discount,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub similar: bool,
    pub pi_distance: f64,
    pub space_mismatch: f64,
    pub cost_mismatch: f64,
    pub transition_mismatch: f64,
    pub dt_mismatch: f64,
    pub disturbance_mismatch: f64,
}

fn rel_gap(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if !(a.is_finite() && b.is_finite()) {
        return f64::INFINITY;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn max_gap<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| rel_gap(*x, *y)).fold(0.0, f64::max)
}

/// Van der Corput radical inverse in `base`.
fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let b = base as f64;
    let mut f = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f /= b;
    }
    out
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Deterministic Halton points inside the (dimensionless) state-action box;
/// infinite bounds are replaced by a unit-width window next to the finite one.
fn sample_grid(states: &BoxSpace, actions: &BoxSpace) -> Vec<(Vec<f64>, Vec<f64>)> {
    let ranges: Vec<(f64, f64)> = states
        .lower
        .iter()
        .zip(&states.upper)
        .chain(actions.lower.iter().zip(&actions.upper))
        .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
            (true, true) => (l, u),
            (true, false) => (l, l + 1.0),
            (false, true) => (u - 1.0, u),
            (false, false) => (-1.0, 1.0),
        })
        .collect();
    let d = ranges.len();
    let n = SIMILARITY_SAMPLES_PER_DIM * d.max(1);
    (1..=n)
        .map(|i| {
            let p: Vec<f64> = ranges
                .iter()
                .enumerate()
                .map(|(k, (l, u))| l + (u - l) * radical_inverse(i, PRIMES[k % PRIMES.len()]))
                .collect();
            (p[..states.len()].to_vec(), p[states.len()..].to_vec())
        })
        .collect()
}

/// Compares the dimensionless forms of two MDPs.
pub fn check_similarity(a: &MdpInstance, b: &MdpInstance, tol: f64) -> Result<SimilarityReport, MdpError> {
    let (pa, pb) = (&a.model.params, &b.model.params);
    let names = |m: &MdpInstance| m.model.params.quantities().iter().map(|q| q.name.clone()).collect::<Vec<_>>();
    if names(a) != names(b) || pa.repeating() != pb.repeating() {
        return Err(MdpError::Incomparable("quantity names or repeating variables differ".into()));
    }
    if a.n_states() != b.n_states() || a.n_actions() != b.n_actions() {
        return Err(MdpError::Incomparable("state or action sizes differ".into()));
    }
    if a.model.state_dims != b.model.state_dims || a.model.input_dims != b.model.input_dims || a.cost_dim != b.cost_dim
    {
        return Err(MdpError::Incomparable("unit signatures differ".into()));
    }
    let pi = pi_distance(pa, pb)?;
    let da = nondimensionalize_mdp(a, &a.scaling()?)?;
    let db = nondimensionalize_mdp(b, &b.scaling()?)?;

    let space = max_gap(&da.state_space.lower, &db.state_space.lower)
        .max(max_gap(&da.state_space.upper, &db.state_space.upper))
        .max(max_gap(&da.action_space.lower, &db.action_space.lower))
        .max(max_gap(&da.action_space.upper, &db.action_space.upper));
    let dt = rel_gap(da.dt, db.dt).max(rel_gap(da.discount, db.discount));
    let disturbance = match (&da.disturbance, &db.disturbance) {
        (None, None) => 0.0,
        (Some(x), Some(y)) => max_gap(x.mean.iter(), y.mean.iter()).max(max_gap(x.cov.iter(), y.cov.iter())),
        _ => f64::INFINITY,
    };

    let mut cost = 0.0f64;
    let mut transition = 0.0f64;
    for (s, u) in sample_grid(&da.state_space, &da.action_space) {
        cost = cost.max(rel_gap(da.cost(&s, &u), db.cost(&s, &u)));
        transition = transition.max(match (da.step(&s, &u), db.step(&s, &u)) {
            (Ok(x), Ok(y)) => max_gap(&x, &y),
            (Err(_), Err(_)) => 0.0,
            _ => f64::INFINITY,
        });
    }
    let similar =
        pi <= tol && space <= tol && cost <= tol && transition <= tol && dt <= tol && disturbance <= tol;
    Ok(SimilarityReport {
        similar,
        pi_distance: pi,
        space_mismatch: space,
        cost_mismatch: cost,
        transition_mismatch: transition,
        dt_mismatch: dt,
        disturbance_mismatch: disturbance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub step: usize,
    pub message: String,
}

/// Closed-loop record of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub dt: f64,
    pub discount: f64,
    /// One more entry than `actions`.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    /// `Σ γᵗ 𝓛(s_t, a_t)` over the completed steps.
    pub objective: f64,
    #[serde(default)]
    pub success: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<EpisodeFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_file: Option<String>,
}

impl EpisodeResult {
    pub fn n_steps(&self) -> usize {
        self.actions.len()
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Runs up to `max_steps` steps, stopping early once `stop(step, next_state)`
/// holds. Failures are recorded in the result rather than returned.
pub fn run_episode<P, E, S>(
    mdp: &MdpInstance,
    mut policy: P,
    x0: &[f64],
    max_steps: usize,
    seed: u64,
    mut stop: S,
) -> EpisodeResult
where
    P: FnMut(&[f64]) -> Result<Vec<f64>, E>,
    E: fmt::Display,
    S: FnMut(usize, &[f64]) -> bool,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = mdp.disturbance.as_ref().map(GaussianDisturbance::sampler);
    let mut out = EpisodeResult {
        dt: mdp.dt,
        discount: mdp.discount,
        states: vec![x0.to_vec()],
        actions: Vec::new(),
        stage_costs: Vec::new(),
        objective: 0.0,
        success: BTreeMap::new(),
        failure: None,
        trajectory_file: None,
    };
    let mut weight = 1.0;
    for step in 0..max_steps {
        let s = out.states.last().expect("non-empty").clone();
        let a = match policy(&s) {
            Ok(a) if a.len() == mdp.n_actions() => a,
            Ok(a) => {
                out.failure = Some(EpisodeFailure { step, message: format!("policy returned {} actions", a.len()) });
                break;
            }
            Err(e) => {
                out.failure = Some(EpisodeFailure { step, message: e.to_string() });
                break;
            }
        };
        let d = sampler.as_ref().map(|smp| smp.sample(&mut rng));
        let next = match mdp.transition(&s, &a, d.as_deref()) {
            Ok(x) => x,
            Err(e) => {
                out.failure = Some(EpisodeFailure { step, message: e.to_string() });
                break;
            }
        };
        let c = mdp.cost(&s, &a);
        out.objective += weight * c;
        weight *= mdp.discount;
        out.stage_costs.push(c);
        out.actions.push(a);
        out.states.push(next);
        if stop(step, out.states.last().expect("non-empty")) {
            break;
        }
    }
    out
}

/// `J = Σ_{t<n_steps} γᵗ 𝓛(s_t, a_t)` along a closed-loop rollout.
pub fn evaluate_policy_objective<P, E>(
    mdp: &MdpInstance,
    policy: P,
    x0: &[f64],
    n_steps: usize,
    seed: u64,
) -> Result<EpisodeResult, MdpError>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>, E>,
    E: fmt::Display,
{
    if n_steps == 0 {
        return Err(MdpError::Invalid("episode needs at least one step".into()));
    }
    if x0.len() != mdp.n_states() {
        return Err(MdpError::Invalid(format!("initial state has {} entries", x0.len())));
    }
    let res = run_episode(mdp, policy, x0, n_steps, seed, |_, _| false);
    match res.failure {
        Some(EpisodeFailure { step, message }) => Err(MdpError::Episode { step, message }),
        None => Ok(res),
    }
}

/// Deterministic physical policy seen through the scaling:
/// `π̃(s̃) = M_a⁻¹ π(M_s s̃)`.
pub fn dimensionless_view<P, E>(
    mut policy: P,
    scaling: &ScalingTransform,
) -> impl FnMut(&[f64]) -> Result<Vec<f64>, E>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>, E>,
{
    let scaling = scaling.clone();
    move |s: &[f64]| policy(&scaling.to_physical_state(s)).map(|a| scaling.to_dimensionless_input(&a))
}

pub(crate) fn diag_inverse(m: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(m.len(), m.iter().map(|v| 1.0 / v)))
}
