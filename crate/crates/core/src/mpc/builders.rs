//! Ready-made problems for the two benchmark systems. Weights are given in
//! dimensionless form so the same vector means the same controller at every
//! scale.

use super::{Lookahead, MpcError, MpcProblem, TunableWeight, WeightBlock};
use crate::dimensional::QuantitySet;
use crate::dynamics::{cartpole_model, racecar_model, scaling_for, ScalingTransform, Track};

pub const CARTPOLE_HORIZON: usize = 20;

/// `[q_ξ, q_φ, q_ξ̇, q_φ̇, r_F]`.
pub const DEFAULT_CARTPOLE_WEIGHTS: [f64; 5] = [640.0, 1000.0, 0.0785, 0.1226, 0.9624];

const CARTPOLE_NAMES: [&str; 5] = ["q_xi", "q_phi", "q_xi_dot", "q_phi_dot", "r_force"];

/// 0.05 s at the 0.8 m reference pole.
pub fn cartpole_dimensionless_dt() -> f64 {
    0.05 / (0.8f64 / 9.81).sqrt()
}

fn check_weights(weights: &[f64], n: usize) -> Result<(), MpcError> {
    if weights.len() != n {
        return Err(MpcError::Invalid(format!("expected {n} weights, got {}", weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(MpcError::Invalid("weights must be finite and non-negative".into()));
    }
    Ok(())
}

fn physical_weights(dimensionless: &[f64], m: &[f64]) -> Vec<f64> {
    dimensionless.iter().zip(m).map(|(w, s)| w / (s * s)).collect()
}

/// Swing-up problem: track the upright origin with `ξ` boxed to
/// `±2.4·l/0.8` and `F` to `±80·m_c·g/9.81`.
pub fn build_cartpole_problem(params: &QuantitySet, weights: &[f64]) -> Result<MpcProblem, MpcError> {
    check_weights(weights, 5)?;
    let model = cartpole_model(params)?;
    let scaling = scaling_for(&model)?;
    let l = params.value("l").map_err(crate::dynamics::DynamicsError::from)?;
    let m_c = params.value("m_c").map_err(crate::dynamics::DynamicsError::from)?;
    let g = params.value("g").map_err(crate::dynamics::DynamicsError::from)?;
    let xi_max = 2.4 * l / 0.8;
    let f_max = 80.0 * m_c * g / 9.81;
    let inf = f64::INFINITY;
    let q = physical_weights(&weights[..4], &scaling.m_x);
    let r = physical_weights(&weights[4..], &scaling.m_u);
    let dt = cartpole_dimensionless_dt() * scaling.m_t;
    let mut p = MpcProblem::new(model, CARTPOLE_HORIZON, dt)
        .with_weights(q.clone(), r, q)
        .with_state_bounds(vec![-xi_max, -inf, -inf, -inf], vec![xi_max, inf, inf, inf])
        .with_terminal_bounds(vec![-xi_max, -inf, -inf, -inf], vec![xi_max, inf, inf, inf])
        .with_input_bounds(vec![-f_max], vec![f_max]);
    p.angle_states = vec![1];
    p.tunable = CARTPOLE_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| TunableWeight {
            name: name.to_string(),
            block: if i < 4 { WeightBlock::Shared } else { WeightBlock::Input },
            index: if i < 4 { i } else { 0 },
        })
        .collect();
    p.scaling = Some(scaling);
    p.validate()?;
    Ok(p)
}

pub const RACECAR_HORIZON: usize = 20;

/// Progress lookahead at the horizon end, in car lengths.
pub const RACECAR_LOOKAHEAD: f64 = 50.0;

/// Tunable `[q_σ, q_n, q_α]` for the stages, then for the terminal state.
pub const DEFAULT_RACECAR_WEIGHTS: [f64; 6] = [0.01, 0.01, 0.01, 0.1, 0.1, 0.01];

const RACECAR_NAMES: [&str; 6] = ["q_sigma", "q_n", "q_alpha", "qN_sigma", "qN_n", "qN_alpha"];

/// Fixed dimensionless weights on `[v, D, δ]` and on the two rates.
const SPEED_WEIGHT: f64 = 1e-3;
const ACTUATOR_WEIGHTS: [f64; 2] = [1e-3, 5e-3];
const RATE_WEIGHTS: [f64; 2] = [1e-2, 5e-2];
/// Dimensionless speed reference.
const SPEED_REFERENCE: f64 = 20.0;
const DUTY_MAX: f64 = 1.0;
const STEER_MAX: f64 = 0.4;
/// Dimensionless rate limits on `D` and `δ`.
const RATE_MAX: [f64; 2] = [3.0, 0.6];
/// Clearance kept from the track edge, in car lengths.
const EDGE_MARGIN: f64 = 0.25;

/// 0.05 s for the small reference car (`l·c_r3 = 0.3 s`).
pub fn racecar_dimensionless_dt() -> f64 {
    1.0 / 6.0
}

/// Rate-input problem on the state `[σ, n, α, v, D, δ]` with inputs
/// `[Ḋ, δ̇]`; `weights` are the tunable dimensionless entries.
pub fn build_racecar_delta_u_problem(
    params: &QuantitySet,
    track: &Track,
    weights: &[f64],
) -> Result<MpcProblem, MpcError> {
    check_weights(weights, 6)?;
    let model = racecar_model(params, track)?.rate_augmented();
    let scaling: ScalingTransform = scaling_for(&model)?;
    let l = params.value("l").map_err(crate::dynamics::DynamicsError::from)?;
    let q_dimless = [weights[0], weights[1], weights[2], SPEED_WEIGHT, ACTUATOR_WEIGHTS[0], ACTUATOR_WEIGHTS[1]];
    let qn_dimless = [weights[3], weights[4], weights[5], SPEED_WEIGHT, ACTUATOR_WEIGHTS[0], ACTUATOR_WEIGHTS[1]];
    let q = physical_weights(&q_dimless, &scaling.m_x);
    let q_terminal = physical_weights(&qn_dimless, &scaling.m_x);
    let r = physical_weights(&RATE_WEIGHTS, &scaling.m_u);

    let inf = f64::INFINITY;
    let n_max = track.half_width() - EDGE_MARGIN * l;
    if n_max <= 0.0 {
        return Err(MpcError::Invalid("track is narrower than the edge margin".into()));
    }
    let lb = vec![-inf, -n_max, -inf, -inf, -DUTY_MAX, -STEER_MAX];
    let ub = vec![inf, n_max, inf, inf, DUTY_MAX, STEER_MAX];
    let rate: Vec<f64> = RATE_MAX.iter().zip(&scaling.m_u).map(|(r, m)| r * m).collect();
    let mut x_ref = vec![0.0; 6];
    x_ref[3] = SPEED_REFERENCE * scaling.m_x[3];
    let dt = racecar_dimensionless_dt() * scaling.m_t;
    let mut p = MpcProblem::new(model, RACECAR_HORIZON, dt)
        .with_weights(q, r, q_terminal)
        .with_reference(x_ref, vec![0.0; 2])
        .with_state_bounds(lb.clone(), ub.clone())
        .with_terminal_bounds(lb, ub)
        .with_input_bounds(rate.iter().map(|v| -v).collect(), rate);
    p.lookahead = Some(Lookahead { state: 0, offset: RACECAR_LOOKAHEAD * l });
    p.tunable = RACECAR_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| TunableWeight {
            name: name.to_string(),
            block: if i < 3 { WeightBlock::Stage } else { WeightBlock::Terminal },
            index: i % 3,
        })
        .collect();
    p.scaling = Some(scaling);
    p.validate()?;
    Ok(p)
}
