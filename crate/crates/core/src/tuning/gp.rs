//! Gaussian-process surrogate with a Matérn-5/2 kernel on the unit cube.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Smallest noise-to-signal ratio the fit may choose.
pub const NOISE_FLOOR: f64 = 1e-8;

const LOG_LENGTH_RANGE: (f64, f64) = (-4.6, 2.3);
const LOG_NOISE_RANGE: (f64, f64) = (-18.42, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    pub length_scales: Vec<f64>,
    /// Noise variance relative to the signal variance.
    pub noise_ratio: f64,
}

fn matern52(a: &[f64], b: &[f64], length_scales: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    let s = (5.0 * r2).sqrt();
    (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
}

fn correlation(points: &[Vec<f64>], hyper: &Hyperparameters) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        matern52(&points[i], &points[j], &hyper.length_scales) + if i == j { hyper.noise_ratio } else { 0.0 }
    })
}

/// Posterior of a zero-mean GP on standardized targets.
pub struct GaussianProcess {
    points: Vec<Vec<f64>>,
    hyper: Hyperparameters,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    signal_variance: f64,
    mean: f64,
    scale: f64,
}

/// Profiled log marginal likelihood, with the signal variance at its optimum.
fn profiled_likelihood(points: &[Vec<f64>], y: &DVector<f64>, hyper: &Hyperparameters) -> Option<f64> {
    let chol = correlation(points, hyper).cholesky()?;
    let alpha = chol.solve(y);
    let n = y.len() as f64;
    let sigma2 = y.dot(&alpha) / n;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return None;
    }
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Some(-0.5 * n * sigma2.ln() - 0.5 * log_det)
}

fn unpack(theta: &[f64]) -> Hyperparameters {
    let d = theta.len() - 1;
    Hyperparameters {
        length_scales: theta[..d].iter().map(|v| v.exp()).collect(),
        noise_ratio: theta[d].exp().max(NOISE_FLOOR),
    }
}

/// Coarse grid over a shared length scale and the noise ratio, then a
/// coordinate pattern search on the log hyperparameters.
fn fit_hyperparameters(points: &[Vec<f64>], y: &DVector<f64>) -> Option<Hyperparameters> {
    let d = points[0].len();
    let score = |theta: &[f64]| profiled_likelihood(points, y, &unpack(theta)).unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for ell in [0.05f64, 0.1, 0.2, 0.5, 1.0, 2.0] {
        for noise in [NOISE_FLOOR, 1e-6, 1e-4, 1e-2] {
            let mut theta = vec![ell.ln(); d];
            theta.push(noise.ln());
            let s = score(&theta);
            if best.as_ref().map_or(true, |(_, b)| s > *b) {
                best = Some((theta, s));
            }
        }
    }
    let (mut theta, mut value) = best?;
    if !value.is_finite() {
        return None;
    }
    let mut step = 1.0;
    while step > 0.02 {
        let mut improved = false;
        for i in 0..=d {
            let range = if i < d { LOG_LENGTH_RANGE } else { LOG_NOISE_RANGE };
            for dir in [1.0, -1.0] {
                let mut trial = theta.clone();
                trial[i] = (trial[i] + dir * step).clamp(range.0, range.1);
                if trial[i] == theta[i] {
                    continue;
                }
                let s = score(&trial);
                if s > value {
                    theta = trial;
                    value = s;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Some(unpack(&theta))
}

impl GaussianProcess {
    /// Fits hyperparameters by maximum marginal likelihood. `None` when the
    /// targets are all equal or no fit is numerically usable.
    pub fn fit(points: &[Vec<f64>], targets: &[f64]) -> Option<Self> {
        let (y, mean, scale) = standardize(targets)?;
        let hyper = fit_hyperparameters(points, &y)?;
        Self::build(points, y, mean, scale, hyper)
    }

    pub fn with_hyperparameters(points: &[Vec<f64>], targets: &[f64], hyper: Hyperparameters) -> Option<Self> {
        let (y, mean, scale) = standardize(targets)?;
        Self::build(points, y, mean, scale, hyper)
    }

    fn build(points: &[Vec<f64>], y: DVector<f64>, mean: f64, scale: f64, hyper: Hyperparameters) -> Option<Self> {
        let chol = correlation(points, &hyper).cholesky()?;
        let alpha = chol.solve(&y);
        let signal_variance = y.dot(&alpha) / y.len() as f64;
        Some(Self { points: points.to_vec(), hyper, chol, alpha, signal_variance, mean, scale })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// Posterior mean and standard deviation of the latent function, in the
    /// units of the targets.
    pub fn predict(&self, z: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| matern52(p, z, &self.hyper.length_scales)),
        );
        let mu = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (self.signal_variance * (1.0 - k.dot(&v))).max(0.0);
        (self.mean + self.scale * mu, self.scale * var.sqrt())
    }
}

fn standardize(targets: &[f64]) -> Option<(DVector<f64>, f64, f64)> {
    if targets.is_empty() || targets.iter().any(|t| !t.is_finite()) {
        return None;
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt();
    if !(scale > 1e-12 * mean.abs().max(1.0)) {
        return None;
    }
    Some((DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - mean) / scale)), mean, scale))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn interpolates_at_the_noise_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let targets: Vec<f64> = points.iter().map(|p| (4.0 * p[0]).sin() + p[1] * p[1]).collect();
        let hyper = Hyperparameters { length_scales: vec![0.4, 0.4], noise_ratio: NOISE_FLOOR };
        let gp = GaussianProcess::with_hyperparameters(&points, &targets, hyper).unwrap();
        for (p, t) in points.iter().zip(&targets) {
            let (mu, sd) = gp.predict(p);
            assert!((mu - t).abs() < 1e-6, "{mu} vs {t}");
            assert!(sd < 1e-3);
        }
    }

    #[test]
    fn fitted_model_tracks_a_smooth_function() {
        let points: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let f = |x: f64| (6.0 * x).cos();
        let targets: Vec<f64> = points.iter().map(|p| f(p[0])).collect();
        let gp = GaussianProcess::fit(&points, &targets).unwrap();
        for x in [0.05, 0.33, 0.71, 0.95] {
            let (mu, _) = gp.predict(&[x]);
            assert!((mu - f(x)).abs() < 0.05, "x {x}: {mu} vs {}", f(x));
        }
        assert!(gp.hyperparameters().noise_ratio >= NOISE_FLOOR);
    }

    #[test]
    fn uncertainty_grows_away_from_data() {
        let points = vec![vec![0.1], vec![0.2]];
        let gp = GaussianProcess::fit(&points, &[1.0, 2.0]).unwrap();
        assert!(gp.predict(&[0.9]).1 > gp.predict(&[0.15]).1);
    }

    #[test]
    fn constant_targets_are_degenerate() {
        assert!(GaussianProcess::fit(&[vec![0.1], vec![0.5]], &[2.0, 2.0]).is_none());
    }
}
