use std::collections::BTreeMap;

use log::debug;
use num_rational::Rational64;
use num_traits::{One, Zero};
use serde::Serialize;

use super::dimension::{format_rational, rational_pow, DimensionVector};
use super::quantity::QuantitySet;
use super::rational::{rank, rref, solve_unique, RationalMatrix};
use super::DimensionalError;

/// Tolerance on log-space Π equality when a fixed quantity over-determines
/// the matching problem.
pub const MATCH_TOLERANCE: f64 = 1e-12;

/// A dimensionless monomial `q_i · Π_j q_j^{α_j}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiGroup {
    /// `(quantity name, exponent)` pairs; the non-repeating quantity comes
    /// first with exponent +1, followed by repeating quantities in their
    /// designated order. Zero exponents are omitted.
    #[serde(serialize_with = "serialize_monomial")]
    pub monomial: Vec<(String, Rational64)>,
    pub value: f64,
}

impl PiGroup {
    pub fn exponent(&self, name: &str) -> Rational64 {
        self.monomial
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| *e)
            .unwrap_or_else(Rational64::zero)
    }

    /// Evaluates this monomial on another quantity set with the same names.
    pub fn evaluate(&self, qs: &QuantitySet) -> Result<f64, DimensionalError> {
        self.monomial.iter().try_fold(1.0, |acc, (name, e)| Ok(acc * rational_pow(qs.value(name)?, e)))
    }

    /// Summed dimension vector of the monomial (exactly zero for a valid group).
    pub fn dimension(&self, qs: &QuantitySet) -> Result<DimensionVector, DimensionalError> {
        let mut total = DimensionVector::dimensionless(qs.dimensions().len());
        for (name, e) in &self.monomial {
            let q = qs.get(name).ok_or_else(|| DimensionalError::UnknownQuantity(name.clone()))?;
            total = &total + &q.dim.pow(*e);
        }
        Ok(total)
    }

    /// `m_p·m_c^-1`, `mu_f·m_c^-1·l^1/2·g^-1/2`.
    pub fn symbolic(&self) -> String {
        self.monomial
            .iter()
            .map(|(n, e)| {
                if e.is_one() {
                    n.clone()
                } else {
                    format!("{}^{}", n, format_rational(e))
                }
            })
            .collect::<Vec<_>>()
            .join("·")
    }
}

fn serialize_monomial<S: serde::Serializer>(
    monomial: &[(String, Rational64)],
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(monomial.len()))?;
    for (name, e) in monomial {
        if e.is_integer() {
            map.serialize_entry(name, e.numer())?;
        } else {
            map.serialize_entry(name, &format_rational(e))?;
        }
    }
    map.end()
}

/// Dimension matrix with one column per listed vector.
fn column_matrix(columns: &[&DimensionVector], n_rows: usize) -> RationalMatrix {
    (0..n_rows)
        .map(|row| columns.iter().map(|c| c.exponents()[row]).collect())
        .collect()
}

/// True iff the repeating variables are dimensionally independent and span
/// every dimension that occurs in the set.
pub fn validate_repeating_set(qs: &QuantitySet) -> Result<bool, DimensionalError> {
    let repeating = qs.repeating_quantities()?;
    let n_dims = qs.dimensions().len();
    let rep_dims: Vec<&DimensionVector> = repeating.iter().map(|q| &q.dim).collect();
    let all_dims: Vec<&DimensionVector> = qs.quantities().iter().map(|q| &q.dim).collect();

    let rep_rank = rank(&column_matrix(&rep_dims, n_dims), rep_dims.len());
    if rep_rank != rep_dims.len() {
        return Ok(false);
    }
    let full_rank = rank(&column_matrix(&all_dims, n_dims), all_dims.len());
    Ok(full_rank == rep_rank)
}

fn ensure_valid(qs: &QuantitySet) -> Result<(), DimensionalError> {
    if validate_repeating_set(qs)? {
        Ok(())
    } else {
        Err(DimensionalError::InvalidRepeatingSet(qs.repeating().to_vec()))
    }
}

/// Exponents `α` over the repeating variables such that their monomial
/// carries `target`'s dimension.
fn repeating_exponents(qs: &QuantitySet, target: &DimensionVector) -> Option<Vec<Rational64>> {
    let repeating = qs.repeating_quantities().ok()?;
    let rep_dims: Vec<&DimensionVector> = repeating.iter().map(|q| &q.dim).collect();
    let a = column_matrix(&rep_dims, qs.dimensions().len());
    solve_unique(&a, target.exponents(), rep_dims.len())
}

/// One Π-group per non-repeating quantity, in declaration order.
pub fn compute_pi_groups(qs: &QuantitySet) -> Result<Vec<PiGroup>, DimensionalError> {
    ensure_valid(qs)?;
    let mut groups = Vec::new();
    for q in qs.quantities().iter().filter(|q| !qs.is_repeating(&q.name)) {
        let alpha = repeating_exponents(qs, &-&q.dim)
            .ok_or_else(|| DimensionalError::Internal(format!("singular system forming group for {}", q.name)))?;
        let mut monomial = vec![(q.name.clone(), Rational64::one())];
        monomial.extend(
            qs.repeating()
                .iter()
                .zip(alpha)
                .filter(|(_, e)| !e.is_zero())
                .map(|(n, e)| (n.clone(), e)),
        );
        let mut group = PiGroup { monomial, value: 0.0 };
        group.value = group.evaluate(qs)?;
        debug_assert!(group.dimension(qs)?.is_dimensionless());
        groups.push(group);
    }
    Ok(groups)
}

/// Numeric value of the unique repeating-variable monomial with dimension `target`.
pub fn scaling_factor(target: &DimensionVector, qs: &QuantitySet) -> Result<f64, DimensionalError> {
    ensure_valid(qs)?;
    if target.len() != qs.dimensions().len() {
        return Err(DimensionalError::UnscalableDimension(target.to_string()));
    }
    let alpha = repeating_exponents(qs, target)
        .ok_or_else(|| DimensionalError::UnscalableDimension(target.display_with(qs.dimensions())))?;
    let repeating = qs.repeating_quantities()?;
    Ok(repeating.iter().zip(&alpha).fold(1.0, |acc, (q, e)| acc * rational_pow(q.value, e)))
}

/// Builds a dynamically similar system at a new scale.
///
/// `fixed` quantities keep their reference values and `new_values` assigns
/// new ones. All remaining quantities are solved from Π-equality. The
/// equations are linear in the log-ratios `ρ_q = ln(q'/q)` with exact
/// rational coefficients, so every solved value is `q · Π_k (q_k'/q_k)^c_k`.
/// If a repeating quantity is left undetermined it is held at its reference
/// value.
pub fn match_similar_system(
    reference: &QuantitySet,
    fixed: &[String],
    new_values: &BTreeMap<String, f64>,
) -> Result<QuantitySet, DimensionalError> {
    let groups = compute_pi_groups(reference)?;
    for name in fixed.iter().chain(new_values.keys()) {
        if reference.get(name).is_none() {
            return Err(DimensionalError::UnknownQuantity(name.clone()));
        }
    }
    if let Some(name) = fixed.iter().find(|n| new_values.contains_key(*n)) {
        return Err(DimensionalError::InfeasibleMatching(format!(
            "{name} is both fixed and assigned a new value"
        )));
    }

    // log-ratio of every known quantity
    let mut known: BTreeMap<&str, f64> = BTreeMap::new();
    for name in fixed {
        known.insert(name, 0.0);
    }
    for (name, value) in new_values {
        let old = reference.value(name)?;
        if !(value.is_finite() && *value > 0.0 && old > 0.0) {
            return Err(DimensionalError::NonPositiveValue(name.clone()));
        }
        known.insert(name, (value / old).ln());
    }

    // Unknown columns: non-repeating first so that free variables end up
    // being repeating quantities whenever possible.
    let mut unknown: Vec<&str> = reference
        .quantities()
        .iter()
        .map(|q| q.name.as_str())
        .filter(|n| !known.contains_key(n) && !reference.is_repeating(n))
        .collect();
    unknown.extend(
        reference.repeating().iter().map(String::as_str).filter(|n| !known.contains_key(n)),
    );
    let known_names: Vec<&str> = known.keys().copied().collect();

    // [A_unknown | A_known] with one row per Π-group.
    let n_u = unknown.len();
    let rows: RationalMatrix = groups
        .iter()
        .map(|g| {
            unknown
                .iter()
                .chain(known_names.iter())
                .map(|n| g.exponent(n))
                .collect()
        })
        .collect();
    let (reduced, pivots) = rref(rows, n_u);
    let n_pivots = pivots.len();

    for &name in unknown.iter().enumerate().filter(|(i, _)| !pivots.contains(i)).map(|(_, n)| n) {
        if !reference.is_repeating(name) {
            return Err(DimensionalError::InfeasibleMatching(format!(
                "{name} is not determined by the matching conditions"
            )));
        }
        debug!("matching: {name} is undetermined and keeps its reference value");
    }

    // Rows without an unknown pivot are consistency conditions on the known values.
    for row in reduced.iter().skip(n_pivots) {
        let residual: f64 = known_names
            .iter()
            .enumerate()
            .map(|(k, n)| super::dimension::rational_to_f64(&row[n_u + k]) * known[n])
            .sum();
        if residual.abs() > MATCH_TOLERANCE {
            return Err(DimensionalError::InfeasibleMatching(format!(
                "Π-equality violated by fixed values (log residual {residual:.3e})"
            )));
        }
    }

    let mut out = reference.clone();
    for (name, value) in new_values {
        out = out.with_value(name, *value)?;
    }
    for (row, &col) in pivots.iter().enumerate() {
        let name = unknown[col];
        // ρ_col = -Σ_k c_k ρ_k (free unknowns have ρ = 0)
        let ratio = known_names.iter().enumerate().fold(1.0, |acc, (k, n)| {
            let coef = -reduced[row][n_u + k];
            if coef.is_zero() {
                return acc;
            }
            let r = if let Some(v) = new_values.get(*n) {
                v / reference.value(n).unwrap_or(1.0)
            } else {
                1.0
            };
            acc * rational_pow(r, &coef)
        });
        let old = reference.value(name)?;
        out = out.with_value(name, old * ratio)?;
    }
    Ok(out)
}

/// Euclidean distance between the log-Π-value vectors of two systems.
pub fn pi_distance(a: &QuantitySet, b: &QuantitySet) -> Result<f64, DimensionalError> {
    let names_a: Vec<&str> = a.quantities().iter().map(|q| q.name.as_str()).collect();
    let names_b: Vec<&str> = b.quantities().iter().map(|q| q.name.as_str()).collect();
    if names_a != names_b || a.repeating() != b.repeating() {
        return Err(DimensionalError::IncomparableSets);
    }
    let groups = compute_pi_groups(a)?;
    let mut sum = 0.0;
    for g in &groups {
        let va = g.value;
        let vb = g.evaluate(b)?;
        if !(va > 0.0 && vb > 0.0) {
            return Err(DimensionalError::NonPositivePi(g.symbolic()));
        }
        let d = vb.ln() - va.ln();
        sum += d * d;
    }
    Ok(sum.sqrt())
}
