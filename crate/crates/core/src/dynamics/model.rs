use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::scaling::ScalingTransform;
use super::track::Track;
use super::DynamicsError;
use crate::dimensional::{DimensionVector, QuantitySet};

/// Continuous-time right-hand side `ẋ = f(x, u)` with parameters baked in.
pub trait VectorField: Send + Sync {
    fn n_states(&self) -> usize;
    fn n_inputs(&self) -> usize;

    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DynamicsError>;

    /// `(∂f/∂x, ∂f/∂u)`. The default uses central differences; the built-in
    /// models override it with exact forward-mode derivatives.
    fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        let (nx, nu) = (self.n_states(), self.n_inputs());
        let mut a = DMatrix::zeros(nx, nx);
        let mut b = DMatrix::zeros(nx, nu);
        let mut xp = x.to_vec();
        for j in 0..nx {
            let h = 1e-6 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let fp = self.eval(&xp, u)?;
            xp[j] = x[j] - h;
            let fm = self.eval(&xp, u)?;
            xp[j] = x[j];
            for i in 0..nx {
                a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let mut up = u.to_vec();
        for j in 0..nu {
            let h = 1e-6 * (1.0 + u[j].abs());
            up[j] = u[j] + h;
            let fp = self.eval(x, &up)?;
            up[j] = u[j] - h;
            let fm = self.eval(x, &up)?;
            up[j] = u[j];
            for i in 0..nx {
                b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok((a, b))
    }
}

/// How a model was built; enough to rebuild it from a parameter set when a
/// problem is restored from disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Cartpole,
    Racecar { track: Track },
    /// Inputs appended to the state and driven by their rates.
    RateAugmented { base: Box<ModelSource> },
    Scaled { base: Box<ModelSource>, scaling: ScalingTransform },
    /// User-supplied closure; cannot be rebuilt from a file.
    Custom { name: String },
}

/// A continuous-time model with unit signatures for states and inputs.
#[derive(Clone)]
pub struct OdeModel {
    pub state_dims: Vec<DimensionVector>,
    pub input_dims: Vec<DimensionVector>,
    pub params: QuantitySet,
    pub source: ModelSource,
    field: Arc<dyn VectorField>,
}

impl fmt::Debug for OdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeModel")
            .field("source", &self.source)
            .field("n_states", &self.n_states())
            .field("n_inputs", &self.n_inputs())
            .finish()
    }
}

impl OdeModel {
    pub fn new(
        state_dims: Vec<DimensionVector>,
        input_dims: Vec<DimensionVector>,
        params: QuantitySet,
        source: ModelSource,
        field: Arc<dyn VectorField>,
    ) -> Self {
        assert_eq!(state_dims.len(), field.n_states());
        assert_eq!(input_dims.len(), field.n_inputs());
        Self { state_dims, input_dims, params, source, field }
    }

    /// Wraps a closure as a model; Jacobians fall back to finite differences.
    pub fn from_fn<F>(
        name: &str,
        state_dims: Vec<DimensionVector>,
        input_dims: Vec<DimensionVector>,
        params: QuantitySet,
        rhs: F,
    ) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let field = FnField { nx: state_dims.len(), nu: input_dims.len(), rhs };
        Self::new(state_dims, input_dims, params, ModelSource::Custom { name: name.to_string() }, Arc::new(field))
    }

    pub fn n_states(&self) -> usize {
        self.field.n_states()
    }

    pub fn n_inputs(&self) -> usize {
        self.field.n_inputs()
    }

    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }

    /// Evaluates the right-hand side and rejects non-finite derivatives.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        if x.len() != self.n_states() || u.len() != self.n_inputs() {
            return Err(DynamicsError::Signature(format!(
                "expected {} states and {} inputs, got {} and {}",
                self.n_states(),
                self.n_inputs(),
                x.len(),
                u.len()
            )));
        }
        let dx = self.field.eval(x, u)?;
        if dx.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { state: x.to_vec() });
        }
        Ok(dx)
    }

    pub fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        self.field.jacobian(x, u)
    }

    pub fn is_dimensionless(&self) -> bool {
        self.state_dims.iter().chain(&self.input_dims).all(DimensionVector::is_dimensionless)
    }

    /// Appends the inputs to the state; the new inputs are their rates.
    /// Input `j` becomes a state with the input's unit and its rate carries
    /// that unit divided by time.
    pub fn rate_augmented(&self) -> Self {
        let n_dims = self.params.dimensions().len();
        let mut time = DimensionVector::dimensionless(n_dims);
        if let Some(t) = self.params.dimensions().iter().position(|d| d == "T") {
            time = {
                let mut e = vec![0i64; n_dims];
                e[t] = 1;
                DimensionVector::from_integers(&e)
            };
        }
        let mut state_dims = self.state_dims.clone();
        state_dims.extend(self.input_dims.iter().cloned());
        let input_dims = self.input_dims.iter().map(|d| d - &time).collect();
        let field = RateAugmentedField { base: self.field.clone() };
        Self::new(
            state_dims,
            input_dims,
            self.params.clone(),
            ModelSource::RateAugmented { base: Box::new(self.source.clone()) },
            Arc::new(field),
        )
    }
}

struct FnField<F> {
    nx: usize,
    nu: usize,
    rhs: F,
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync,
{
    fn n_states(&self) -> usize {
        self.nx
    }
    fn n_inputs(&self) -> usize {
        self.nu
    }
    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let dx = (self.rhs)(x, u);
        if dx.len() != self.nx {
            return Err(DynamicsError::Signature(format!(
                "right-hand side returned {} entries for {} states",
                dx.len(),
                self.nx
            )));
        }
        Ok(dx)
    }
}

struct RateAugmentedField {
    base: Arc<dyn VectorField>,
}

impl VectorField for RateAugmentedField {
    fn n_states(&self) -> usize {
        self.base.n_states() + self.base.n_inputs()
    }
    fn n_inputs(&self) -> usize {
        self.base.n_inputs()
    }
    fn eval(&self, x: &[f64], rate: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let nx = self.base.n_states();
        let mut dx = self.base.eval(&x[..nx], &x[nx..])?;
        dx.extend_from_slice(rate);
        Ok(dx)
    }
    fn jacobian(&self, x: &[f64], _rate: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        let nx = self.base.n_states();
        let nu = self.base.n_inputs();
        let (fx, fu) = self.base.jacobian(&x[..nx], &x[nx..])?;
        let mut a = DMatrix::zeros(nx + nu, nx + nu);
        a.view_mut((0, 0), (nx, nx)).copy_from(&fx);
        a.view_mut((0, nx), (nx, nu)).copy_from(&fu);
        let mut b = DMatrix::zeros(nx + nu, nu);
        for j in 0..nu {
            b[(nx + j, j)] = 1.0;
        }
        Ok((a, b))
    }
}

/// `f̃(x̃, ũ) = m_t · M_x⁻¹ · f(M_x x̃, M_u ũ)`.
pub(crate) struct ScaledField {
    pub base: Arc<dyn VectorField>,
    pub m_x: Vec<f64>,
    pub m_u: Vec<f64>,
    pub m_t: f64,
}

impl ScaledField {
    fn physical(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            x.iter().zip(&self.m_x).map(|(a, s)| a * s).collect(),
            u.iter().zip(&self.m_u).map(|(a, s)| a * s).collect(),
        )
    }
}

impl VectorField for ScaledField {
    fn n_states(&self) -> usize {
        self.base.n_states()
    }
    fn n_inputs(&self) -> usize {
        self.base.n_inputs()
    }
    fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let (xp, up) = self.physical(x, u);
        let f = self.base.eval(&xp, &up)?;
        Ok(f.iter().zip(&self.m_x).map(|(v, s)| self.m_t * v / s).collect())
    }
    fn jacobian(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        let (xp, up) = self.physical(x, u);
        let (mut a, mut b) = self.base.jacobian(&xp, &up)?;
        for i in 0..a.nrows() {
            let row = self.m_t / self.m_x[i];
            for j in 0..a.ncols() {
                a[(i, j)] *= row * self.m_x[j];
            }
            for j in 0..b.ncols() {
                b[(i, j)] *= row * self.m_u[j];
            }
        }
        Ok((a, b))
    }
}

/// Dimensionless version of `model`: states `x̃ = M_x⁻¹x`, inputs
/// `ũ = M_u⁻¹u`, time `t̃ = t/m_t`.
pub fn nondimensionalize_ode(model: &OdeModel, scaling: &ScalingTransform) -> Result<OdeModel, DynamicsError> {
    if scaling.m_x.len() != model.n_states() || scaling.m_u.len() != model.n_inputs() {
        return Err(DynamicsError::Signature(format!(
            "scaling has {}/{} entries, model has {} states and {} inputs",
            scaling.m_x.len(),
            scaling.m_u.len(),
            model.n_states(),
            model.n_inputs()
        )));
    }
    scaling.validate()?;
    let n_dims = model.params.dimensions().len();
    let field = ScaledField {
        base: model.field.clone(),
        m_x: scaling.m_x.clone(),
        m_u: scaling.m_u.clone(),
        m_t: scaling.m_t,
    };
    Ok(OdeModel {
        state_dims: vec![DimensionVector::dimensionless(n_dims); model.n_states()],
        input_dims: vec![DimensionVector::dimensionless(n_dims); model.n_inputs()],
        params: model.params.clone(),
        source: ModelSource::Scaled { base: Box::new(model.source.clone()), scaling: scaling.clone() },
        field: Arc::new(field),
    })
}
