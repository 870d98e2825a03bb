use serde::{Deserialize, Serialize};

use super::DynamicsError;
use crate::dimensional::{scaling_factor, DimensionVector, QuantitySet};

/// Diagonal scalings relating physical and dimensionless variables:
/// `x = M_x x̃`, `u = M_u ũ`, `t = m_t t̃`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    pub m_x: Vec<f64>,
    pub m_u: Vec<f64>,
    pub m_t: f64,
    /// Disturbance scaling `M_d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_d: Option<Vec<f64>>,
    /// Constraint units `M_h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_h: Option<Vec<f64>>,
    /// Units of the MPC stage and terminal costs.
    #[serde(default = "one")]
    pub m_stage: f64,
    #[serde(default = "one")]
    pub m_terminal: f64,
    /// Unit of the MDP stage cost `m_𝓛`.
    #[serde(default = "one")]
    pub m_cost: f64,
}

fn one() -> f64 {
    1.0
}

impl ScalingTransform {
    pub fn identity(n_states: usize, n_inputs: usize) -> Self {
        Self {
            m_x: vec![1.0; n_states],
            m_u: vec![1.0; n_inputs],
            m_t: 1.0,
            m_d: None,
            m_h: None,
            m_stage: 1.0,
            m_terminal: 1.0,
            m_cost: 1.0,
        }
    }

    /// Every entry is the repeating-variable monomial with the matching unit.
    pub fn from_dimensions(
        params: &QuantitySet,
        state_dims: &[DimensionVector],
        input_dims: &[DimensionVector],
        time_dim: &DimensionVector,
    ) -> Result<Self, DynamicsError> {
        let factors = |dims: &[DimensionVector]| -> Result<Vec<f64>, DynamicsError> {
            dims.iter().map(|d| scaling_factor(d, params).map_err(DynamicsError::from)).collect()
        };
        Ok(Self {
            m_x: factors(state_dims)?,
            m_u: factors(input_dims)?,
            m_t: scaling_factor(time_dim, params)?,
            m_d: None,
            m_h: None,
            m_stage: 1.0,
            m_terminal: 1.0,
            m_cost: 1.0,
        })
    }

    pub fn with_cost_unit(mut self, params: &QuantitySet, cost_dim: &DimensionVector) -> Result<Self, DynamicsError> {
        self.m_cost = scaling_factor(cost_dim, params)?;
        Ok(self)
    }

    pub fn with_disturbance(mut self, m_d: Vec<f64>) -> Self {
        self.m_d = Some(m_d);
        self
    }

    pub fn with_constraint_units(mut self, m_h: Vec<f64>) -> Self {
        self.m_h = Some(m_h);
        self
    }

    /// All entries strictly positive and finite.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let all = self
            .m_x
            .iter()
            .chain(&self.m_u)
            .chain(self.m_d.iter().flatten())
            .chain(self.m_h.iter().flatten())
            .copied()
            .chain([self.m_t, self.m_stage, self.m_terminal, self.m_cost]);
        for v in all {
            if !ok(v) {
                return Err(DynamicsError::Signature(format!("scaling entry {v} is not positive")));
            }
        }
        Ok(())
    }

    pub fn to_dimensionless_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.m_x).map(|(v, s)| v / s).collect()
    }

    pub fn to_physical_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.m_x).map(|(v, s)| v * s).collect()
    }

    pub fn to_dimensionless_input(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.m_u).map(|(v, s)| v / s).collect()
    }

    pub fn to_physical_input(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.m_u).map(|(v, s)| v * s).collect()
    }

    pub fn dimensionless_dt(&self, dt: f64) -> f64 {
        dt / self.m_t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimensional::Quantity;

    #[test]
    fn cartpole_scalings() {
        let qs = QuantitySet::mlt(
            vec![
                Quantity::new("m_c", 1.0, DimensionVector::mlt(1, 0, 0)),
                Quantity::new("l", 0.8, DimensionVector::mlt(0, 1, 0)),
                Quantity::new("g", 9.81, DimensionVector::mlt(0, 1, -2)),
            ],
            &["m_c", "l", "g"],
        )
        .unwrap();
        let s = ScalingTransform::from_dimensions(
            &qs,
            &[DimensionVector::mlt(0, 1, 0), DimensionVector::mlt(0, 0, -1)],
            &[DimensionVector::mlt(1, 1, -2)],
            &DimensionVector::mlt(0, 0, 1),
        )
        .unwrap();
        assert_eq!(s.m_x[0], 0.8);
        assert!((s.m_x[1] - (9.81f64 / 0.8).sqrt()).abs() < 1e-14);
        assert!((s.m_u[0] - 9.81).abs() < 1e-14);
        assert!((s.m_t - (0.8f64 / 9.81).sqrt()).abs() < 1e-15);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn rejects_non_positive_entries() {
        let mut s = ScalingTransform::identity(2, 1);
        s.m_x[1] = 0.0;
        assert!(s.validate().is_err());
    }
}
