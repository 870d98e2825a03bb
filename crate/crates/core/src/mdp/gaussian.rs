use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{diag_inverse, MdpError};

/// Additive disturbance `d ~ N(mean, cov)` in state units.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDisturbance {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub(crate) struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.mean.len(), (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.mean + &self.factor * z).iter().copied().collect()
    }
}

impl GaussianDisturbance {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, MdpError> {
        if cov.nrows() != mean.len() {
            return Err(MdpError::Covariance(format!("{}x{} covariance for a {}-vector", cov.nrows(), cov.ncols(), mean.len())));
        }
        check_psd(&cov)?;
        Ok(Self { mean, cov })
    }

    /// Draws via `mean + V √Λ z`, which tolerates singular covariances.
    pub(crate) fn sampler(&self) -> GaussianSampler {
        let eig = SymmetricEigen::new(self.cov.clone());
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        GaussianSampler { mean: self.mean.clone(), factor }
    }
}

pub(crate) fn check_psd(cov: &DMatrix<f64>) -> Result<(), MdpError> {
    if !cov.is_square() {
        return Err(MdpError::Covariance("matrix is not square".into()));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(MdpError::Covariance("matrix has non-finite entries".into()));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-12 * scale {
        return Err(MdpError::Covariance("matrix is not symmetric".into()));
    }
    let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    if min < -1e-12 * scale {
        return Err(MdpError::Covariance(format!("smallest eigenvalue {min:e} is negative")));
    }
    Ok(())
}

/// Distribution of `M_d⁻¹ d` for `d ~ N(mu, sigma)`:
/// `(M_d⁻¹μ, M_d⁻¹ Σ M_d⁻ᵀ)`.
pub fn transform_gaussian(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    m_d: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), MdpError> {
    if mu.len() != m_d.len() || sigma.nrows() != m_d.len() {
        return Err(MdpError::Scaling(format!(
            "disturbance of size {} with {} scaling entries",
            mu.len(),
            m_d.len()
        )));
    }
    if m_d.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(MdpError::Scaling("disturbance scaling must be positive".into()));
    }
    check_psd(sigma)?;
    let inv = diag_inverse(m_d);
    let mean = &inv * mu;
    let cov = &inv * sigma * inv.transpose();
    Ok((mean, cov))
}
