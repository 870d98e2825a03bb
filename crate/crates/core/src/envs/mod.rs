//! Benchmark tasks: cartpole swing-up and race-car lap, their families of
//! dynamically similar systems, closed-loop episodes and scoring.

mod output;
mod spec;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::dimensional::{match_similar_system, pi_distance, DimensionVector, DimensionalError, QuantitySet};
use crate::dynamics::{cartpole, cartpole_model, racecar, racecar_model, scaling_for, DynamicsError, ScalingTransform, Track};
use crate::mdp::{run_episode, BoxSpace, EpisodeResult, MdpError, MdpInstance, StageCost};
use crate::mpc::{
    build_cartpole_problem, build_racecar_delta_u_problem, cartpole_dimensionless_dt, nondimensionalize_mpc,
    racecar_dimensionless_dt, wrap_angle, MpcController, MpcError, MpcProblem,
};
use crate::tuning::TrialRecord;

pub use output::{write_atomic, write_episode, WeightsFile};
pub use spec::{load_task, TaskSpec};

/// Cartpole episode length at every scale: 15 s at the 0.8 m pole.
pub const CARTPOLE_EPISODE_STEPS: usize = 300;
/// Largest `|φ|` allowed over the closing part of a successful episode.
pub const SWING_UP_ANGLE: f64 = 0.1;
pub const SWING_UP_FRACTION: f64 = 0.2;
/// Race time limit in dimensionless time: 10 s for the small car.
pub const RACE_TIME_LIMIT: f64 = 10.0 / 0.3;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Dimensional(#[from] DimensionalError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

/// Swing-up from the hanging state. Stage cost `−|π − |φ||/(10π)`, so
/// holding the pole upright earns `0.1` per step.
#[derive(Clone, Debug)]
pub struct CartpoleTask {
    pub params: QuantitySet,
    pub episode_steps: usize,
    pub dt: f64,
    pub x0: Vec<f64>,
}

/// Lap from standstill on the track centerline. Stage cost `Δt`.
#[derive(Clone, Debug)]
pub struct RaceTask {
    pub params: QuantitySet,
    pub track: Track,
    pub max_steps: usize,
    pub dt: f64,
    /// `[σ, n, α, v, D, δ]`.
    pub x0: Vec<f64>,
}

impl CartpoleTask {
    pub fn new(params: QuantitySet) -> Result<Self, EnvError> {
        let scaling = scaling_for(&cartpole_model(&params)?)?;
        Ok(Self {
            params,
            episode_steps: CARTPOLE_EPISODE_STEPS,
            dt: cartpole_dimensionless_dt() * scaling.m_t,
            x0: vec![0.0, PI, 0.0, 0.0],
        })
    }
}

impl RaceTask {
    pub fn new(params: QuantitySet, track: Track) -> Result<Self, EnvError> {
        let model = racecar_model(&params, &track)?.rate_augmented();
        let scaling = scaling_for(&model)?;
        let dt = racecar_dimensionless_dt() * scaling.m_t;
        Ok(Self {
            params,
            track,
            max_steps: (RACE_TIME_LIMIT / racecar_dimensionless_dt()).round() as usize,
            dt,
            x0: vec![0.0; 6],
        })
    }
}

#[derive(Clone, Debug)]
pub enum Task {
    Cartpole(CartpoleTask),
    Race(RaceTask),
}

fn cartpole_cost() -> StageCost {
    Arc::new(|s: &[f64], _a: &[f64]| -(PI - wrap_angle(s[1]).abs()).abs() / (10.0 * PI))
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Cartpole(_) => "cartpole",
            Task::Race(_) => "race",
        }
    }

    pub fn params(&self) -> &QuantitySet {
        match self {
            Task::Cartpole(t) => &t.params,
            Task::Race(t) => &t.params,
        }
    }

    /// Directory label, `l<length>`.
    pub fn scale_label(&self) -> String {
        format!("l{}", self.params().value("l").unwrap_or(f64::NAN))
    }

    pub fn x0(&self) -> &[f64] {
        match self {
            Task::Cartpole(t) => &t.x0,
            Task::Race(t) => &t.x0,
        }
    }

    pub fn max_steps(&self) -> usize {
        match self {
            Task::Cartpole(t) => t.episode_steps,
            Task::Race(t) => t.max_steps,
        }
    }

    pub fn set_max_steps(&mut self, steps: usize) {
        match self {
            Task::Cartpole(t) => t.episode_steps = steps,
            Task::Race(t) => t.max_steps = steps,
        }
    }

    /// Physical MPC problem with the given dimensionless tunable weights.
    pub fn problem(&self, weights: &[f64]) -> Result<MpcProblem, EnvError> {
        Ok(match self {
            Task::Cartpole(t) => build_cartpole_problem(&t.params, weights)?,
            Task::Race(t) => build_racecar_delta_u_problem(&t.params, &t.track, weights)?,
        })
    }

    pub fn default_weights(&self) -> Vec<f64> {
        match self {
            Task::Cartpole(_) => crate::mpc::DEFAULT_CARTPOLE_WEIGHTS.to_vec(),
            Task::Race(_) => crate::mpc::DEFAULT_RACECAR_WEIGHTS.to_vec(),
        }
    }

    pub fn weight_names(&self) -> Result<Vec<String>, EnvError> {
        Ok(self.problem(&self.default_weights())?.tunable.iter().map(|t| t.name.clone()).collect())
    }

    /// Controller acting through the dimensionless form of [`Task::problem`].
    pub fn controller(&self, weights: &[f64]) -> Result<MpcController, EnvError> {
        let p = self.problem(weights)?;
        let scaling = p.scaling.clone().ok_or_else(|| EnvError::Invalid("problem has no scaling".into()))?;
        Ok(MpcController::new(nondimensionalize_mpc(&p, &scaling)?, scaling)?)
    }

    /// Closed-loop plant as an MDP in physical units.
    pub fn mdp(&self) -> Result<MdpInstance, EnvError> {
        let inf = f64::INFINITY;
        Ok(match self {
            Task::Cartpole(t) => {
                let p = build_cartpole_problem(&t.params, &crate::mpc::DEFAULT_CARTPOLE_WEIGHTS)?;
                MdpInstance::new(
                    p.model,
                    t.dt,
                    BoxSpace::new(p.x_lb, p.x_ub)?,
                    BoxSpace::new(p.u_lb, p.u_ub)?,
                    cartpole_cost(),
                    DimensionVector::mlt(0, 0, 0),
                    1.0,
                )?
            }
            Task::Race(t) => {
                let p = build_racecar_delta_u_problem(&t.params, &t.track, &crate::mpc::DEFAULT_RACECAR_WEIGHTS)?;
                let w = t.track.half_width();
                let dt = t.dt;
                MdpInstance::new(
                    p.model,
                    t.dt,
                    BoxSpace::new(
                        vec![-inf, -w, -inf, -inf, p.x_lb[4], p.x_lb[5]],
                        vec![inf, w, inf, inf, p.x_ub[4], p.x_ub[5]],
                    )?,
                    BoxSpace::new(p.u_lb, p.u_ub)?,
                    Arc::new(move |_s: &[f64], _a: &[f64]| dt),
                    DimensionVector::mlt(0, 0, 1),
                    1.0,
                )?
            }
        })
    }

    pub fn scaling(&self) -> Result<ScalingTransform, EnvError> {
        Ok(self.mdp()?.scaling()?)
    }
}

fn set_flag(res: &mut EpisodeResult, name: &str, value: bool) {
    res.success.insert(name.to_string(), value);
}

/// Closed-loop rollout of `policy` (physical units) on the task. Race
/// episodes stop at the lap line or when the car leaves the track.
pub fn run_task<P, E>(task: &Task, policy: P) -> Result<EpisodeResult, EnvError>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>, E>,
    E: std::fmt::Display,
{
    let mdp = task.mdp()?;
    let mut res = match task {
        Task::Cartpole(t) => run_episode(&mdp, policy, &t.x0, t.episode_steps, 0, |_, _| false),
        Task::Race(t) => {
            let (lap, w) = (t.track.total_length(), t.track.half_width());
            run_episode(&mdp, policy, &t.x0, t.max_steps, 0, |_, s| s[0] >= lap || s[1].abs() > w)
        }
    };
    match task {
        Task::Cartpole(t) => {
            let tail = ((t.episode_steps as f64) * SWING_UP_FRACTION).ceil() as usize;
            let ok = !res.failed()
                && res.n_steps() == t.episode_steps
                && res.states[res.states.len() - tail..].iter().all(|s| wrap_angle(s[1]).abs() < SWING_UP_ANGLE);
            set_flag(&mut res, "swing_up", ok);
        }
        Task::Race(t) => {
            let last = res.states.last().expect("non-empty");
            let lap = !res.failed() && last[0] >= t.track.total_length();
            let off = last[1].abs() > t.track.half_width();
            let failed = res.failed();
            set_flag(&mut res, "lap_completed", lap);
            set_flag(&mut res, "off_track", off);
            set_flag(&mut res, "truncated", !lap && !off && !failed);
        }
    }
    Ok(res)
}

/// Runs the task under the MPC with dimensionless tunable `weights`.
pub fn run_controller(task: &Task, weights: &[f64]) -> Result<EpisodeResult, EnvError> {
    let mut c = task.controller(weights)?;
    run_task(task, |s: &[f64]| c.step(s))
}

/// Negative total stage cost.
pub fn score(res: &EpisodeResult) -> f64 {
    -res.objective
}

pub fn succeeded(task: &Task, res: &EpisodeResult) -> bool {
    let key = match task {
        Task::Cartpole(_) => "swing_up",
        Task::Race(_) => "lap_completed",
    };
    res.success.get(key).copied().unwrap_or(false)
}

/// Elapsed time up to the first step whose progress reaches the lap line.
pub fn lap_time(task: &Task, res: &EpisodeResult) -> Option<f64> {
    if !matches!(task, Task::Race(_)) || !succeeded(task, res) {
        return None;
    }
    Some(res.dt * res.n_steps() as f64)
}

/// Trial record for tuning: `−score` for the cartpole (feasible when the
/// episode ran to the end) and the lap time for the race car (feasible when
/// a lap was completed).
pub fn trial_record(task: &Task, weights: &[f64]) -> TrialRecord {
    let res = match run_controller(task, weights) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("trial rejected: {e}");
            return TrialRecord::infeasible(weights.to_vec());
        }
    };
    match task {
        Task::Cartpole(_) => TrialRecord { params: weights.to_vec(), objective: res.objective, feasible: !res.failed() },
        Task::Race(_) => match lap_time(task, &res) {
            Some(t) => TrialRecord { params: weights.to_vec(), objective: t, feasible: true },
            None => TrialRecord::infeasible(weights.to_vec()),
        },
    }
}

/// States mapped through `M_x⁻¹`.
pub fn dimensionless_states(res: &EpisodeResult, scaling: &ScalingTransform) -> Vec<Vec<f64>> {
    res.states.iter().map(|s| scaling.to_dimensionless_state(s)).collect()
}

/// Root mean square over all entries; infinite when the shapes differ.
pub fn rms_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return f64::INFINITY;
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            sum += (p - q).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Similar cartpoles at each pole length, with `μ_f` and `g` held.
pub fn cartpole_family(l_values: &[f64]) -> Result<Vec<(QuantitySet, ScalingTransform, CartpoleTask)>, EnvError> {
    let reference = cartpole::reference_params();
    let fixed = vec!["mu_f".to_string(), "g".to_string()];
    l_values
        .iter()
        .map(|&l| {
            if !(l > 0.0 && l.is_finite()) {
                return Err(EnvError::Invalid(format!("pole length {l} must be positive")));
            }
            let params = match_similar_system(&reference, &fixed, &BTreeMap::from([("l".to_string(), l)]))?;
            let task = CartpoleTask::new(params.clone())?;
            let scaling = Task::Cartpole(task.clone()).scaling()?;
            Ok((params, scaling, task))
        })
        .collect()
}

/// Similar race cars for each `(l, m)`, each on the reference desk track
/// scaled by `l'/l`.
pub fn racecar_family(specs: &[(f64, f64)]) -> Result<Vec<(QuantitySet, ScalingTransform, RaceTask)>, EnvError> {
    let reference = racecar::reference_params();
    let l_ref = reference.value("l")?;
    let track = Track::desk(l_ref);
    specs
        .iter()
        .map(|&(l, m)| {
            if !(l > 0.0 && m > 0.0 && l.is_finite() && m.is_finite()) {
                return Err(EnvError::Invalid(format!("car size ({l}, {m}) must be positive")));
            }
            let values = BTreeMap::from([("l".to_string(), l), ("m".to_string(), m)]);
            let params = match_similar_system(&reference, &[], &values)?;
            let task = RaceTask::new(params.clone(), track.scaled(l / l_ref))?;
            let scaling = Task::Race(task.clone()).scaling()?;
            Ok((params, scaling, task))
        })
        .collect()
}

/// Largest mismatch between the dimensionless set-ups of two tasks: Π-groups,
/// sampling time, episode length and, for race cars, the track geometry.
pub fn task_dissimilarity(a: &Task, b: &Task) -> Result<f64, EnvError> {
    if a.name() != b.name() {
        return Ok(f64::INFINITY);
    }
    let pi = pi_distance(a.params(), b.params())?;
    let (sa, sb) = (a.scaling()?, b.scaling()?);
    let rel = |x: f64, y: f64| if x == y { 0.0 } else { (x - y).abs() / x.abs().max(y.abs()) };
    let dt = |t: &Task, s: &ScalingTransform| match t {
        Task::Cartpole(c) => c.dt / s.m_t,
        Task::Race(r) => r.dt / s.m_t,
    };
    let mut gap = pi.max(rel(dt(a, &sa), dt(b, &sb)));
    if a.max_steps() != b.max_steps() {
        gap = f64::INFINITY;
    }
    match (a, b) {
        (Task::Cartpole(_), Task::Cartpole(_)) => {}
        (Task::Race(ra), Task::Race(rb)) => {
            let (la, lb) = (ra.params.value("l")?, rb.params.value("l")?);
            let (ta, tb) = (ra.track.segments(), rb.track.segments());
            if ta.len() != tb.len() {
                return Ok(f64::INFINITY);
            }
            gap = gap.max(rel(ra.track.half_width() / la, rb.track.half_width() / lb));
            for (x, y) in ta.iter().zip(tb) {
                gap = gap.max(rel(x.length / la, y.length / lb)).max((x.curvature * la - y.curvature * lb).abs());
            }
        }
        _ => return Ok(f64::INFINITY),
    }
    Ok(gap)
}
