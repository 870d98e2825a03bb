//! Pendulum on a cart with viscous cart friction.
//!
//! State `[ξ, φ, ξ̇, φ̇]`, input `F`. `φ = 0` is upright, `φ = π` hanging.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::dual::{Dual, Scalar};
use super::model::{ModelSource, OdeModel, VectorField};
use super::DynamicsError;
use crate::dimensional::{DimensionVector, Quantity, QuantitySet};

pub const PARAM_NAMES: [&str; 5] = ["m_c", "m_p", "l", "mu_f", "g"];

/// Reference system: `m_c = 1 kg`, `m_p = 0.1 kg`, `l = 0.8 m`,
/// `μ_f = 0.1 kg/s`, `g = 9.81 m/s²`, repeating `{m_c, l, g}`.
pub fn reference_params() -> QuantitySet {
    QuantitySet::mlt(
        vec![
            Quantity::new("m_c", 1.0, DimensionVector::mlt(1, 0, 0)),
            Quantity::new("m_p", 0.1, DimensionVector::mlt(1, 0, 0)),
            Quantity::new("l", 0.8, DimensionVector::mlt(0, 1, 0)),
            Quantity::new("mu_f", 0.1, DimensionVector::mlt(1, 0, -1)),
            Quantity::new("g", 9.81, DimensionVector::mlt(0, 1, -2)),
        ],
        &["m_c", "l", "g"],
    )
    .expect("reference cartpole set is well formed")
}

pub fn state_dims() -> Vec<DimensionVector> {
    vec![
        DimensionVector::mlt(0, 1, 0),
        DimensionVector::mlt(0, 0, 0),
        DimensionVector::mlt(0, 1, -1),
        DimensionVector::mlt(0, 0, -1),
    ]
}

pub fn input_dims() -> Vec<DimensionVector> {
    vec![DimensionVector::mlt(1, 1, -2)]
}

pub(crate) fn expected_param_dims() -> [(&'static str, DimensionVector); 5] {
    [
        ("m_c", DimensionVector::mlt(1, 0, 0)),
        ("m_p", DimensionVector::mlt(1, 0, 0)),
        ("l", DimensionVector::mlt(0, 1, 0)),
        ("mu_f", DimensionVector::mlt(1, 0, -1)),
        ("g", DimensionVector::mlt(0, 1, -2)),
    ]
}

pub(crate) fn check_param_dims(
    params: &QuantitySet,
    expected: &[(&str, DimensionVector)],
) -> Result<(), DynamicsError> {
    if params.dimensions() != ["M", "L", "T"] {
        return Err(DynamicsError::Parameter("model parameters must use the [M, L, T] basis".into()));
    }
    for (name, dim) in expected {
        let q = params
            .get(name)
            .ok_or_else(|| DynamicsError::Parameter(format!("missing parameter `{name}`")))?;
        if q.dim != *dim {
            return Err(DynamicsError::Parameter(format!(
                "parameter `{name}` has unit {}, expected {}",
                q.dim.display_with(params.dimensions()),
                dim.display_with(params.dimensions())
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct CartpoleField {
    m_c: f64,
    m_p: f64,
    l: f64,
    mu_f: f64,
    g: f64,
}

impl CartpoleField {
    fn rhs<T: Scalar>(&self, x: &[T], u: &[T]) -> [T; 4] {
        let (xi_dot, phi, phi_dot) = (x[2], x[1], x[3]);
        let (s, c) = (phi.sin(), phi.cos());
        let force = u[0] - xi_dot * self.mu_f;
        let den = (c * c * (-self.m_p)) + (self.m_c + self.m_p);
        let xi_ddot = (s * phi_dot * phi_dot * (-self.m_p * self.l) + c * s * (self.m_p * self.g) + force) / den;
        let phi_ddot = (c * s * phi_dot * phi_dot * (-self.m_p * self.l)
            + force * c
            + s * ((self.m_c + self.m_p) * self.g))
            / (den * self.l);
        [xi_dot, phi_dot, xi_ddot, phi_ddot]
    }
}

impl VectorField for CartpoleField {
    fn n_states(&self) -> usize {
        4
    }
    fn n_inputs(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        Ok(self.rhs(x, u).to_vec())
    }
    fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        let xd: Vec<Dual<5>> = x.iter().enumerate().map(|(i, &v)| Dual::variable(v, i)).collect();
        let ud = [Dual::variable(u[0], 4)];
        let f = self.rhs(&xd, &ud);
        let a = DMatrix::from_fn(4, 4, |i, j| f[i].d[j]);
        let b = DMatrix::from_fn(4, 1, |i, _| f[i].d[4]);
        Ok((a, b))
    }
}

pub fn cartpole_model(params: &QuantitySet) -> Result<OdeModel, DynamicsError> {
    check_param_dims(params, &expected_param_dims())?;
    let get = |n: &str| params.value(n).map_err(DynamicsError::from);
    let field = CartpoleField {
        m_c: get("m_c")?,
        m_p: get("m_p")?,
        l: get("l")?,
        mu_f: get("mu_f")?,
        g: get("g")?,
    };
    if !(field.m_c > 0.0 && field.m_p > 0.0 && field.l > 0.0) {
        return Err(DynamicsError::Parameter("masses and pole length must be positive".into()));
    }
    Ok(OdeModel::new(state_dims(), input_dims(), params.clone(), ModelSource::Cartpole, Arc::new(field)))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn equilibria() {
        let m = cartpole_model(&reference_params()).unwrap();
        assert_eq!(m.rhs(&[0.0, 0.0, 0.0, 0.0], &[0.0]).unwrap(), vec![0.0; 4]);
        let hanging = m.rhs(&[0.0, PI, 0.0, 0.0], &[0.0]).unwrap();
        assert!(hanging.iter().all(|v| v.abs() < 1e-14), "{hanging:?}");
    }

    #[test]
    fn upright_is_unstable_and_force_accelerates_cart() {
        let m = cartpole_model(&reference_params()).unwrap();
        let d = m.rhs(&[0.0, 0.01, 0.0, 0.0], &[0.0]).unwrap();
        assert!(d[3] > 0.0);
        let d = m.rhs(&[0.0, PI, 0.0, 0.0], &[1.0]).unwrap();
        // hanging: the pole adds no inertia along the cart axis
        assert!((d[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = reference_params().with_value("l", -1.0).unwrap();
        assert!(matches!(cartpole_model(&p), Err(DynamicsError::Parameter(_))));
        let wrong_unit = QuantitySet::mlt(
            reference_params()
                .quantities()
                .iter()
                .map(|q| {
                    if q.name == "mu_f" {
                        Quantity::new("mu_f", 0.1, DimensionVector::mlt(1, 0, 0))
                    } else {
                        q.clone()
                    }
                })
                .collect(),
            &["m_c", "l", "g"],
        )
        .unwrap();
        assert!(cartpole_model(&wrong_unit).is_err());
    }

    #[test]
    fn exact_jacobian_matches_differences() {
        let m = cartpole_model(&reference_params()).unwrap();
        let x = [0.3, 2.1, -0.4, 1.7];
        let u = [3.0];
        let (a, b) = m.jacobian(&x, &u).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = m.rhs(&xp, &u).unwrap();
            let fm = m.rhs(&xm, &u).unwrap();
            for i in 0..4 {
                assert!((a[(i, j)] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-7);
            }
        }
        let fp = m.rhs(&x, &[u[0] + h]).unwrap();
        let fm = m.rhs(&x, &[u[0] - h]).unwrap();
        for i in 0..4 {
            assert!((b[(i, 0)] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-7);
        }
    }
}
