//! Exact dimensional algebra: dimension vectors, Π-groups, scaling factors
//! and dynamic matching of similar systems.

mod dimension;
mod pi;
mod quantity;
pub mod rational;

pub use dimension::{format_rational, parse_rational, rational_pow, rational_to_f64, DimensionVector};
pub use pi::{
    compute_pi_groups, match_similar_system, pi_distance, scaling_factor, validate_repeating_set, PiGroup,
    MATCH_TOLERANCE,
};
pub use quantity::{Quantity, QuantitySet};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimensionalError {
    #[error("unknown quantity `{0}`")]
    UnknownQuantity(String),
    #[error("unknown dimension symbol `{0}`")]
    UnknownDimension(String),
    #[error("duplicate quantity `{0}`")]
    DuplicateQuantity(String),
    #[error("quantity `{0}` has a non-finite value")]
    NonFiniteValue(String),
    #[error("quantity `{0}` must be positive")]
    NonPositiveValue(String),
    #[error("quantity `{name}` has {found} exponents, basis has {expected}")]
    BasisMismatch { name: String, expected: usize, found: usize },
    #[error("malformed exponent `{0}`")]
    BadExponent(String),
    #[error("repeating variables {0:?} are dependent or do not span the set's dimensions")]
    InvalidRepeatingSet(Vec<String>),
    #[error("dimension {0} is not spanned by the repeating variables")]
    UnscalableDimension(String),
    #[error("infeasible matching: {0}")]
    InfeasibleMatching(String),
    #[error("Π-group {0} is not positive; log distance undefined")]
    NonPositivePi(String),
    #[error("quantity sets do not share names and repeating variables")]
    IncomparableSets,
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use num_rational::Rational64;
    use proptest::prelude::*;

    use super::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    fn cartpole() -> QuantitySet {
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
        .unwrap()
    }

    fn racecar() -> QuantitySet {
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
        .unwrap()
    }

    fn monomial(pairs: &[(&str, Rational64)]) -> Vec<(String, Rational64)> {
        pairs.iter().map(|(n, e)| (n.to_string(), *e)).collect()
    }

    #[test]
    fn repeating_set_validation() {
        assert!(validate_repeating_set(&cartpole()).unwrap());
        assert!(validate_repeating_set(&racecar()).unwrap());

        let two_masses = QuantitySet::mlt(cartpole().quantities().to_vec(), &["m_c", "m_p"]).unwrap();
        assert!(!validate_repeating_set(&two_masses).unwrap());

        let unknown = QuantitySet::mlt(cartpole().quantities().to_vec(), &["m_c", "nope", "g"]).unwrap();
        assert_eq!(
            validate_repeating_set(&unknown),
            Err(DimensionalError::UnknownQuantity("nope".into()))
        );
    }

    #[test]
    fn cartpole_groups_are_exact() {
        let groups = compute_pi_groups(&cartpole()).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].monomial, monomial(&[("m_p", r(1, 1)), ("m_c", r(-1, 1))]));
        assert_eq!(
            groups[1].monomial,
            monomial(&[("mu_f", r(1, 1)), ("m_c", r(-1, 1)), ("l", r(1, 2)), ("g", r(-1, 2))])
        );
        assert!((groups[0].value - 0.1).abs() < 1e-15);
        assert!((groups[1].value - 0.1 * (0.8f64 / 9.81).sqrt()).abs() < 1e-15);
        for g in &groups {
            assert!(g.dimension(&cartpole()).unwrap().is_dimensionless());
        }
    }

    #[test]
    fn racecar_groups_are_exact() {
        let groups = compute_pi_groups(&racecar()).unwrap();
        let expected = [
            monomial(&[("l_r", r(1, 1)), ("l", r(-1, 1))]),
            monomial(&[("c_m1", r(1, 1)), ("m", r(-1, 1)), ("l", r(1, 1)), ("c_r3", r(2, 1))]),
            monomial(&[("c_m2", r(1, 1)), ("m", r(-1, 1)), ("l", r(1, 1)), ("c_r3", r(1, 1))]),
            monomial(&[("c_r0", r(1, 1)), ("m", r(-1, 1)), ("l", r(1, 1)), ("c_r3", r(2, 1))]),
            monomial(&[("c_r2", r(1, 1)), ("m", r(-1, 1)), ("l", r(1, 1))]),
        ];
        assert_eq!(groups.len(), 5);
        for (g, e) in groups.iter().zip(expected) {
            assert_eq!(g.monomial, e);
        }
    }

    #[test]
    fn only_repeating_gives_no_groups() {
        let qs = QuantitySet::mlt(
            vec![
                Quantity::new("m", 2.0, DimensionVector::mlt(1, 0, 0)),
                Quantity::new("l", 3.0, DimensionVector::mlt(0, 1, 0)),
                Quantity::new("t", 4.0, DimensionVector::mlt(0, 0, 1)),
            ],
            &["m", "l", "t"],
        )
        .unwrap();
        assert!(compute_pi_groups(&qs).unwrap().is_empty());
    }

    #[test]
    fn scaling_factors() {
        let velocity = DimensionVector::mlt(0, 1, -1);
        assert!((scaling_factor(&velocity, &cartpole()).unwrap() - (9.81f64 * 0.8).sqrt()).abs() < 1e-15);
        let time = DimensionVector::mlt(0, 0, 1);
        assert!((scaling_factor(&time, &racecar()).unwrap() - 0.06 * 5.0).abs() < 1e-15);
        assert_eq!(scaling_factor(&DimensionVector::mlt(0, 0, 0), &cartpole()).unwrap(), 1.0);
    }

    #[test]
    fn unscalable_dimension() {
        let qs = QuantitySet::mlt(
            vec![
                Quantity::new("m", 2.0, DimensionVector::mlt(1, 0, 0)),
                Quantity::new("l", 3.0, DimensionVector::mlt(0, 1, 0)),
            ],
            &["m", "l"],
        )
        .unwrap();
        let err = scaling_factor(&DimensionVector::mlt(0, 0, 1), &qs).unwrap_err();
        assert!(matches!(err, DimensionalError::UnscalableDimension(_)));
    }

    #[test]
    fn cartpole_matching_by_hand() {
        let reference = cartpole();
        let fixed = vec!["mu_f".to_string(), "g".to_string()];
        let new = BTreeMap::from([("l".to_string(), 0.1)]);
        let matched = match_similar_system(&reference, &fixed, &new).unwrap();
        // Π₂ equality with μ_f, g fixed: m_c ∝ √l; Π₁ equality: m_p ∝ m_c.
        let m_c = 1.0 * (0.1f64 / 0.8).sqrt();
        assert!((matched.value("m_c").unwrap() - m_c).abs() < 1e-15);
        assert!((matched.value("m_p").unwrap() - 0.1 * m_c / 1.0).abs() < 1e-15);
        assert_eq!(matched.value("mu_f").unwrap(), 0.1);
        assert_eq!(matched.value("g").unwrap(), 9.81);
        assert!(pi_distance(&reference, &matched).unwrap() < 1e-12);
    }

    #[test]
    fn identity_matching_is_exact() {
        let reference = cartpole();
        let fixed = vec!["mu_f".to_string(), "g".to_string()];
        let new = BTreeMap::from([("l".to_string(), 0.8)]);
        assert_eq!(match_similar_system(&reference, &fixed, &new).unwrap(), reference);
    }

    #[test]
    fn racecar_matching_closed_form() {
        let reference = racecar();
        let new = BTreeMap::from([("l".to_string(), 4.0), ("m".to_string(), 1500.0)]);
        let big = match_similar_system(&reference, &[], &new).unwrap();
        let rl = 4.0 / 0.06;
        let rm = 1500.0 / 0.043;
        // c_r3 is undetermined and keeps its value; the rest follow from Π-inversion.
        assert_eq!(big.value("c_r3").unwrap(), 5.0);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-13 * b.abs();
        assert!(close(big.value("l_r").unwrap(), 0.03 * rl));
        assert!(close(big.value("c_m1").unwrap(), 0.28 * rm / rl));
        assert!(close(big.value("c_m2").unwrap(), 0.05 * rm / rl));
        assert!(close(big.value("c_r0").unwrap(), 0.011 * rm / rl));
        assert!(close(big.value("c_r2").unwrap(), 0.006 * rm / rl));
        assert!(pi_distance(&reference, &big).unwrap() < 1e-12);
    }

    #[test]
    fn over_determined_matching_is_rejected() {
        let reference = cartpole();
        let fixed = vec!["mu_f".to_string(), "g".to_string(), "m_c".to_string()];
        let new = BTreeMap::from([("l".to_string(), 0.1)]);
        let err = match_similar_system(&reference, &fixed, &new).unwrap_err();
        assert!(matches!(err, DimensionalError::InfeasibleMatching(_)));
    }

    #[test]
    fn pi_distance_examples() {
        let a = cartpole();
        assert_eq!(pi_distance(&a, &a).unwrap(), 0.0);
        let b = a.with_value("m_p", 0.2).unwrap();
        assert!((pi_distance(&a, &b).unwrap() - 2f64.ln()).abs() < 1e-15);
        let c = a.with_value("m_p", 0.0).unwrap();
        assert!(matches!(pi_distance(&a, &c), Err(DimensionalError::NonPositivePi(_))));
    }

    fn span_vector() -> impl Strategy<Value = DimensionVector> {
        prop::collection::vec((-6i64..=6, 1i64..=4), 3)
            .prop_map(|v| DimensionVector::new(v.into_iter().map(|(n, d)| Rational64::new(n, d)).collect()))
    }

    proptest! {
        #[test]
        fn scaling_factor_is_multiplicative(d1 in span_vector(), d2 in span_vector()) {
            for qs in [cartpole(), racecar()] {
                let s1 = scaling_factor(&d1, &qs).unwrap();
                let s2 = scaling_factor(&d2, &qs).unwrap();
                let s12 = scaling_factor(&(&d1 + &d2), &qs).unwrap();
                prop_assert!((s12 - s1 * s2).abs() <= 1e-12 * s12.abs());
            }
        }

        #[test]
        fn matched_cartpoles_share_pi_values(l in 0.01f64..50.0) {
            let reference = cartpole();
            let fixed = vec!["mu_f".to_string(), "g".to_string()];
            let matched = match_similar_system(&reference, &fixed, &BTreeMap::from([("l".to_string(), l)])).unwrap();
            let ga = compute_pi_groups(&reference).unwrap();
            let gb = compute_pi_groups(&matched).unwrap();
            for (a, b) in ga.iter().zip(&gb) {
                prop_assert_eq!(&a.monomial, &b.monomial);
                prop_assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs());
                prop_assert!(b.dimension(&matched).unwrap().is_dimensionless());
            }
        }
    }
}
