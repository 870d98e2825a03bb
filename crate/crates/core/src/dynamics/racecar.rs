//! Kinematic single-track car in curvilinear track coordinates.
//!
//! State `[σ, n, α, v]` (progress, lateral offset, heading error, speed),
//! inputs `[D, δ]` (motor duty cycle, steering angle).

use std::sync::Arc;

use nalgebra::DMatrix;

use super::cartpole::check_param_dims;
use super::dual::{Dual, Scalar};
use super::model::{ModelSource, OdeModel, VectorField};
use super::track::Track;
use super::DynamicsError;
use crate::dimensional::{DimensionVector, Quantity, QuantitySet};

pub const PARAM_NAMES: [&str; 8] = ["m", "l", "l_r", "c_m1", "c_m2", "c_r0", "c_r2", "c_r3"];

/// 1:43 scale desk car: `l = 0.06 m`, `m = 0.043 kg`, repeating `{m, l, c_r3}`.
pub fn reference_params() -> QuantitySet {
    QuantitySet::mlt(
        vec![
            Quantity::new("m", 0.043, DimensionVector::mlt(1, 0, 0)),
            Quantity::new("l", 0.06, DimensionVector::mlt(0, 1, 0)),
            Quantity::new("l_r", 0.03, DimensionVector::mlt(0, 1, 0)),
            Quantity::new("c_m1", 0.28, DimensionVector::mlt(1, 1, -2)),
            Quantity::new("c_m2", 0.05, DimensionVector::mlt(1, 0, -1)),
            Quantity::new("c_r0", 0.011, DimensionVector::mlt(1, 1, -2)),
            Quantity::new("c_r2", 0.006, DimensionVector::mlt(1, -1, 0)),
            Quantity::new("c_r3", 5.0, DimensionVector::mlt(0, -1, 1)),
        ],
        &["m", "l", "c_r3"],
    )
    .expect("reference race car set is well formed")
}

pub fn state_dims() -> Vec<DimensionVector> {
    vec![
        DimensionVector::mlt(0, 1, 0),
        DimensionVector::mlt(0, 1, 0),
        DimensionVector::mlt(0, 0, 0),
        DimensionVector::mlt(0, 1, -1),
    ]
}

pub fn input_dims() -> Vec<DimensionVector> {
    vec![DimensionVector::mlt(0, 0, 0), DimensionVector::mlt(0, 0, 0)]
}

fn expected_param_dims() -> [(&'static str, DimensionVector); 8] {
    [
        ("m", DimensionVector::mlt(1, 0, 0)),
        ("l", DimensionVector::mlt(0, 1, 0)),
        ("l_r", DimensionVector::mlt(0, 1, 0)),
        ("c_m1", DimensionVector::mlt(1, 1, -2)),
        ("c_m2", DimensionVector::mlt(1, 0, -1)),
        ("c_r0", DimensionVector::mlt(1, 1, -2)),
        ("c_r2", DimensionVector::mlt(1, -1, 0)),
        ("c_r3", DimensionVector::mlt(0, -1, 1)),
    ]
}

#[derive(Clone, Debug)]
struct RacecarField {
    m: f64,
    l: f64,
    l_r: f64,
    c_m1: f64,
    c_m2: f64,
    c_r0: f64,
    c_r2: f64,
    c_r3: f64,
    track: Track,
}

impl RacecarField {
    fn rhs<T: Scalar>(&self, x: &[T], u: &[T]) -> Result<[T; 4], DynamicsError> {
        let (sigma, n, alpha, v) = (x[0], x[1], x[2], x[3]);
        let (duty, steer) = (u[0], u[1]);
        let (k, dk) = self.track.curvature_with_slope(sigma.value());
        // exact for plain floats, carries the slope for duals
        let kappa = (sigma - sigma.value()) * dk + k;
        if (n.value() * k).abs() >= 1.0 {
            return Err(DynamicsError::OffTrack { progress: sigma.value(), lateral: n.value() });
        }
        let side_slip = steer * (self.l_r / self.l);
        let heading = alpha + side_slip;
        let sigma_dot = v * heading.cos() / (T::constant(1.0) - n * kappa);
        let n_dot = v * heading.sin();
        let alpha_dot = v * steer / self.l - sigma_dot * kappa;
        let drive = (T::constant(self.c_m1) - v * self.c_m2) * duty
            - v * v * self.c_r2
            - (v * self.c_r3).tanh() * self.c_r0;
        let v_dot = drive * side_slip.cos() / self.m;
        Ok([sigma_dot, n_dot, alpha_dot, v_dot])
    }
}

impl VectorField for RacecarField {
    fn n_states(&self) -> usize {
        4
    }
    fn n_inputs(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        Ok(self.rhs(x, u)?.to_vec())
    }
    fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        let xd: Vec<Dual<6>> = x.iter().enumerate().map(|(i, &v)| Dual::variable(v, i)).collect();
        let ud = [Dual::variable(u[0], 4), Dual::variable(u[1], 5)];
        let f = self.rhs(&xd, &ud)?;
        let a = DMatrix::from_fn(4, 4, |i, j| f[i].d[j]);
        let b = DMatrix::from_fn(4, 2, |i, j| f[i].d[4 + j]);
        Ok((a, b))
    }
}

/// Race-car model on `track` (SI units, sized for this car).
pub fn racecar_model(params: &QuantitySet, track: &Track) -> Result<OdeModel, DynamicsError> {
    check_param_dims(params, &expected_param_dims())?;
    let get = |n: &str| params.value(n).map_err(DynamicsError::from);
    let field = RacecarField {
        m: get("m")?,
        l: get("l")?,
        l_r: get("l_r")?,
        c_m1: get("c_m1")?,
        c_m2: get("c_m2")?,
        c_r0: get("c_r0")?,
        c_r2: get("c_r2")?,
        c_r3: get("c_r3")?,
        track: track.clone(),
    };
    if !(field.m > 0.0 && field.l > 0.0) {
        return Err(DynamicsError::Parameter("mass and length must be positive".into()));
    }
    Ok(OdeModel::new(
        state_dims(),
        input_dims(),
        params.clone(),
        ModelSource::Racecar { track: track.clone() },
        Arc::new(field),
    ))
}
