//! Continuous-time models, nondimensionalization and fixed-step integration.

pub mod cartpole;
mod dual;
mod integrate;
mod model;
pub mod racecar;
mod scaling;
mod track;

pub use cartpole::cartpole_model;
pub use dual::{Dual, Scalar};
pub use integrate::{rk4_step, rk4_step_with_jacobian, simulate, Trajectory};
pub use model::{nondimensionalize_ode, ModelSource, OdeModel, VectorField};
pub use racecar::racecar_model;
pub use scaling::ScalingTransform;
pub use track::{Track, TrackSegment};

use thiserror::Error;

use crate::dimensional::{DimensionVector, DimensionalError};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Dimensional(#[from] DimensionalError),
    #[error("signature mismatch: {0}")]
    Signature(String),
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error("invalid track: {0}")]
    Track(String),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("rollout needs at least one step")]
    InvalidHorizon,
    #[error("non-finite derivative at state {state:?}")]
    NonFinite { state: Vec<f64> },
    #[error("car left the track projection region at σ = {progress}, n = {lateral}")]
    OffTrack { progress: f64, lateral: f64 },
    #[error("policy failed at step {step}: {message}")]
    Policy { step: usize, message: String },
    #[error("integration failed at step {step}: {source}")]
    AtStep { step: usize, source: Box<DynamicsError> },
    #[error("cannot rebuild model: {0}")]
    Rebuild(String),
}

/// Builds the scaling for a model from its own unit signatures, with time
/// taken from the `T` dimension of the parameter basis.
pub fn scaling_for(model: &OdeModel) -> Result<ScalingTransform, DynamicsError> {
    let time = time_dimension(model.params.dimensions())?;
    ScalingTransform::from_dimensions(&model.params, &model.state_dims, &model.input_dims, &time)
}

pub(crate) fn time_dimension(symbols: &[String]) -> Result<DimensionVector, DynamicsError> {
    let idx = symbols
        .iter()
        .position(|d| d == "T")
        .ok_or_else(|| DynamicsError::Signature("parameter basis has no time dimension".into()))?;
    let mut e = vec![0i64; symbols.len()];
    e[idx] = 1;
    Ok(DimensionVector::from_integers(&e))
}

/// Rebuilds a model from its construction record.
pub fn rebuild_model(
    source: &ModelSource,
    params: &crate::dimensional::QuantitySet,
) -> Result<OdeModel, DynamicsError> {
    match source {
        ModelSource::Cartpole => cartpole_model(params),
        ModelSource::Racecar { track } => racecar_model(params, track),
        ModelSource::RateAugmented { base } => Ok(rebuild_model(base, params)?.rate_augmented()),
        ModelSource::Scaled { base, scaling } => nondimensionalize_ode(&rebuild_model(base, params)?, scaling),
        ModelSource::Custom { name } => Err(DynamicsError::Rebuild(format!("custom model `{name}`"))),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dimensional::{match_similar_system, rational_pow, QuantitySet};

    fn scalar_model(f: fn(f64, f64) -> f64) -> OdeModel {
        OdeModel::from_fn(
            "scalar",
            vec![DimensionVector::mlt(0, 0, 0)],
            vec![DimensionVector::mlt(0, 0, 0)],
            cartpole::reference_params(),
            move |x, u| vec![f(x[0], u[0])],
        )
    }

    #[test]
    fn rk4_examples() {
        let zero = scalar_model(|_, _| 0.0);
        assert_eq!(rk4_step(&zero, &[1.5], &[0.0], 0.1).unwrap(), vec![1.5]);

        let decay = scalar_model(|x, _| -x);
        let x = rk4_step(&decay, &[1.0], &[0.0], 0.1).unwrap()[0];
        assert!((x - 0.9048375).abs() < 1e-7);
        assert!((x - (-0.1f64).exp()).abs() < 1e-7);

        let drive = scalar_model(|_, u| u);
        assert_eq!(rk4_step(&drive, &[0.0], &[2.0], 0.5).unwrap(), vec![1.0]);

        assert!(matches!(rk4_step(&decay, &[1.0], &[0.0], 0.0), Err(DynamicsError::InvalidStep(_))));
        let blowup = scalar_model(|x, _| 1.0 / (x - x));
        assert!(matches!(rk4_step(&blowup, &[1.0], &[0.0], 0.1), Err(DynamicsError::NonFinite { .. })));
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        // smooth nonlinear field; reference from 4096 fine steps
        let m = scalar_model(|x, u| x.sin() * x.cos() + u * x * x - 0.3 * x);
        let one_step = |h: f64| rk4_step(&m, &[0.7], &[0.4], h).unwrap()[0];
        let dense = |h: f64| {
            let n = 4096;
            let mut x = vec![0.7];
            for _ in 0..n {
                x = rk4_step(&m, &x, &[0.4], h / n as f64).unwrap();
            }
            x[0]
        };
        let e1 = (one_step(0.4) - dense(0.4)).abs();
        let e2 = (one_step(0.2) - dense(0.2)).abs();
        // local error is O(h⁵): halving the step gives roughly 32x, at least 14x
        assert!(e1 / e2 >= 14.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn rk4_jacobian_matches_differences() {
        let m = cartpole_model(&cartpole::reference_params()).unwrap();
        let x = [0.2, 2.5, -0.3, 1.0];
        let u = [4.0];
        let dt = 0.05;
        let (next, a, b) = rk4_step_with_jacobian(&m, &x, &u, dt).unwrap();
        assert_eq!(next, rk4_step(&m, &x, &u, dt).unwrap());
        let h = 1e-6;
        for j in 0..5 {
            let (mut xp, mut xm, mut up, mut um) = (x, x, u, u);
            if j < 4 {
                xp[j] += h;
                xm[j] -= h;
            } else {
                up[0] += h;
                um[0] -= h;
            }
            let fp = rk4_step(&m, &xp, &up, dt).unwrap();
            let fm = rk4_step(&m, &xm, &um, dt).unwrap();
            for i in 0..4 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let exact = if j < 4 { a[(i, j)] } else { b[(i, 0)] };
                assert!((exact - fd).abs() < 1e-7 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn simulate_zero_field_is_constant() {
        let zero = scalar_model(|_, _| 0.0);
        let traj = simulate(&zero, |_| Ok::<_, String>(vec![0.0]), &[2.0], 0.1, 5).unwrap();
        assert_eq!(traj.states.len(), 6);
        assert_eq!(traj.inputs.len(), 5);
        assert!(traj.states.iter().all(|s| s[0] == 2.0));
    }

    #[test]
    fn simulate_reports_policy_step() {
        let zero = scalar_model(|_, _| 0.0);
        let mut calls = 0;
        let err = simulate(
            &zero,
            |_| {
                calls += 1;
                if calls == 3 {
                    Err("boom")
                } else {
                    Ok(vec![0.0])
                }
            },
            &[0.0],
            0.1,
            5,
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::Policy { step: 2, .. }));
    }

    #[test]
    fn racecar_at_rest_stays_at_rest() {
        let m = racecar_model(&racecar::reference_params(), &Track::desk(0.06)).unwrap();
        let traj = simulate(&m, |_| Ok::<_, String>(vec![0.0, 0.0]), &[0.0, 0.0, 0.0, 0.0], 0.05, 20).unwrap();
        assert!(traj.states.iter().all(|s| s[3] == 0.0 && s[0] == 0.0));
    }

    #[test]
    fn identity_scaling_preserves_rhs() {
        let m = cartpole_model(&cartpole::reference_params()).unwrap();
        let s = nondimensionalize_ode(&m, &ScalingTransform::identity(4, 1)).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(m.rhs(&x, &[1.0]).unwrap(), s.rhs(&x, &[1.0]).unwrap());
        assert!(s.is_dimensionless());
    }

    #[test]
    fn scaling_signature_mismatch() {
        let m = cartpole_model(&cartpole::reference_params()).unwrap();
        let err = nondimensionalize_ode(&m, &ScalingTransform::identity(3, 1)).unwrap_err();
        assert!(matches!(err, DynamicsError::Signature(_)));
    }

    #[test]
    fn inverse_transform_recovers_dimensional_rhs() {
        let m = cartpole_model(&cartpole::reference_params()).unwrap();
        let s = scaling_for(&m).unwrap();
        let dm = nondimensionalize_ode(&m, &s).unwrap();
        let x = [0.4, 1.1, -0.5, 2.0];
        let u = [3.0];
        let f = m.rhs(&x, &u).unwrap();
        let ft = dm.rhs(&s.to_dimensionless_state(&x), &s.to_dimensionless_input(&u)).unwrap();
        // f = M_x f̃ / m_t
        for i in 0..4 {
            let back = s.m_x[i] * ft[i] / s.m_t;
            assert!((back - f[i]).abs() <= 1e-12 * f[i].abs().max(1.0));
        }
    }

    fn matched_cartpole(l: f64) -> QuantitySet {
        match_similar_system(
            &cartpole::reference_params(),
            &["mu_f".to_string(), "g".to_string()],
            &BTreeMap::from([("l".to_string(), l)]),
        )
        .unwrap()
    }

    #[test]
    fn similar_cartpoles_share_dimensionless_rhs() {
        let a = cartpole_model(&cartpole::reference_params()).unwrap();
        let b = cartpole_model(&matched_cartpole(0.1)).unwrap();
        let da = nondimensionalize_ode(&a, &scaling_for(&a).unwrap()).unwrap();
        let db = nondimensionalize_ode(&b, &scaling_for(&b).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let u = [rng.gen_range(-8.0..8.0)];
            let fa = da.rhs(&x, &u).unwrap();
            let fb = db.rhs(&x, &u).unwrap();
            for (p, q) in fa.iter().zip(&fb) {
                assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0), "{p} vs {q}");
            }
        }
    }

    /// Re-expresses every quantity in units where mass, length and time are
    /// multiplied by `factors` and checks the derivative transforms with its unit.
    fn assert_unit_consistent(
        build: impl Fn(&QuantitySet) -> OdeModel,
        params: &QuantitySet,
        x: &[f64],
        u: &[f64],
        factors: [f64; 3],
    ) {
        let unit = |d: &DimensionVector| -> f64 {
            d.exponents().iter().zip(factors).fold(1.0, |acc, (e, f)| acc * rational_pow(f, e))
        };
        let mut scaled = params.clone();
        for q in params.quantities() {
            scaled = scaled.with_value(&q.name, q.value / unit(&q.dim)).unwrap();
        }
        let m = build(params);
        let ms = build(&scaled);
        let xs: Vec<f64> = x.iter().zip(&m.state_dims).map(|(v, d)| v / unit(d)).collect();
        let us: Vec<f64> = u.iter().zip(&m.input_dims).map(|(v, d)| v / unit(d)).collect();
        let f = m.rhs(x, u).unwrap();
        let fs = ms.rhs(&xs, &us).unwrap();
        let time = DimensionVector::mlt(0, 0, 1);
        for i in 0..f.len() {
            let expect = f[i] / unit(&(&m.state_dims[i] - &time));
            assert!((fs[i] - expect).abs() <= 1e-11 * expect.abs().max(1e-300), "component {i}: {} vs {expect}", fs[i]);
        }
    }

    #[test]
    fn models_are_dimensionally_consistent() {
        let factors = [2.7, 0.31, 4.2];
        assert_unit_consistent(
            |p| cartpole_model(p).unwrap(),
            &cartpole::reference_params(),
            &[0.3, 2.0, -0.7, 1.3],
            &[5.0],
            factors,
        );
        let length_factor = factors[1];
        assert_unit_consistent(
            move |p| {
                let l = p.value("l").unwrap();
                let _ = length_factor;
                racecar_model(p, &Track::desk(l)).unwrap()
            },
            &racecar::reference_params(),
            &[1.5, 0.02, 0.1, 1.1],
            &[0.6, 0.15],
            factors,
        );
    }

    fn commutation_rms(model: &OdeModel, x0: &[f64], inputs: &[Vec<f64>], dt: f64) -> f64 {
        let s = scaling_for(model).unwrap();
        let dm = nondimensionalize_ode(model, &s).unwrap();
        let mut x = x0.to_vec();
        let mut xt = s.to_dimensionless_state(x0);
        let dtt = s.dimensionless_dt(dt);
        let mut sum = 0.0;
        let mut count = 0;
        for u in inputs {
            x = rk4_step(model, &x, u, dt).unwrap();
            xt = rk4_step(&dm, &xt, &s.to_dimensionless_input(u), dtt).unwrap();
            for (a, b) in s.to_dimensionless_state(&x).iter().zip(&xt) {
                let rel = (a - b) / b.abs().max(1.0);
                sum += rel * rel;
                count += 1;
            }
        }
        (sum / count as f64).sqrt()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn cartpole_rollouts_commute(seed in 0u64..1000, l in 0.05f64..10.0) {
            let model = cartpole_model(&matched_cartpole(l)).unwrap();
            let m_c = model.params.value("m_c").unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen_range(-20.0..20.0) * m_c]).collect();
            let dt = 0.05 * (l / 0.8).sqrt();
            let rms = commutation_rms(&model, &[0.0, PI, 0.0, 0.0], &inputs, dt);
            prop_assert!(rms < 1e-10, "rms {}", rms);
        }
    }
}
