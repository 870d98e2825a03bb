use std::collections::{BTreeMap, HashSet};

use num_rational::Rational64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use super::dimension::{format_rational, parse_rational, DimensionVector};
use super::DimensionalError;

/// A named physical quantity with its SI value.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
    pub dim: DimensionVector,
}

impl Quantity {
    pub fn new(name: impl Into<String>, value: f64, dim: DimensionVector) -> Self {
        Self { name: name.into(), value, dim }
    }
}

/// An ordered set of dimensional quantities together with the designated
/// repeating variables.
///
/// Serializes to the system-spec file layout:
/// `{"dimensions": [...], "quantities": [{"name", "value", "dim"}], "repeating": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpecFile", into = "SystemSpecFile")]
pub struct QuantitySet {
    dimensions: Vec<String>,
    quantities: Vec<Quantity>,
    repeating: Vec<String>,
}

impl QuantitySet {
    /// Checks unique names, finite values and that every dimension vector
    /// uses the declared basis. Repeating names are resolved lazily by the
    /// operations that need them.
    pub fn new(
        dimensions: Vec<String>,
        quantities: Vec<Quantity>,
        repeating: Vec<String>,
    ) -> Result<Self, DimensionalError> {
        let mut seen = HashSet::new();
        for q in &quantities {
            if !seen.insert(q.name.as_str()) {
                return Err(DimensionalError::DuplicateQuantity(q.name.clone()));
            }
            if !q.value.is_finite() {
                return Err(DimensionalError::NonFiniteValue(q.name.clone()));
            }
            if q.dim.len() != dimensions.len() {
                return Err(DimensionalError::BasisMismatch {
                    name: q.name.clone(),
                    expected: dimensions.len(),
                    found: q.dim.len(),
                });
            }
        }
        Ok(Self { dimensions, quantities, repeating })
    }

    /// Same as [`QuantitySet::new`] with the default `[M, L, T]` basis.
    pub fn mlt(quantities: Vec<Quantity>, repeating: &[&str]) -> Result<Self, DimensionalError> {
        Self::new(
            ["M", "L", "T"].iter().map(|s| s.to_string()).collect(),
            quantities,
            repeating.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn dimensions(&self) -> &[String] {
        &self.dimensions
    }

    pub fn quantities(&self) -> &[Quantity] {
        &self.quantities
    }

    pub fn repeating(&self) -> &[String] {
        &self.repeating
    }

    pub fn len(&self) -> usize {
        self.quantities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quantities.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Quantity> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.quantities.iter().position(|q| q.name == name)
    }

    pub fn value(&self, name: &str) -> Result<f64, DimensionalError> {
        self.get(name)
            .map(|q| q.value)
            .ok_or_else(|| DimensionalError::UnknownQuantity(name.to_string()))
    }

    pub fn is_repeating(&self, name: &str) -> bool {
        self.repeating.iter().any(|r| r == name)
    }

    /// Returns a copy with one value replaced.
    pub fn with_value(&self, name: &str, value: f64) -> Result<Self, DimensionalError> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| DimensionalError::UnknownQuantity(name.to_string()))?;
        if !value.is_finite() {
            return Err(DimensionalError::NonFiniteValue(name.to_string()));
        }
        let mut out = self.clone();
        out.quantities[idx].value = value;
        Ok(out)
    }

    pub(crate) fn repeating_quantities(&self) -> Result<Vec<&Quantity>, DimensionalError> {
        self.repeating
            .iter()
            .map(|name| self.get(name).ok_or_else(|| DimensionalError::UnknownQuantity(name.clone())))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRepr {
    Integer(i64),
    Text(String),
}

#[derive(Serialize, Deserialize)]
struct QuantityFile {
    name: String,
    value: f64,
    #[serde(default)]
    dim: BTreeMap<String, ExponentRepr>,
}

#[derive(Serialize, Deserialize)]
struct SystemSpecFile {
    dimensions: Vec<String>,
    quantities: Vec<QuantityFile>,
    repeating: Vec<String>,
}

impl TryFrom<SystemSpecFile> for QuantitySet {
    type Error = DimensionalError;

    fn try_from(file: SystemSpecFile) -> Result<Self, Self::Error> {
        let mut quantities = Vec::with_capacity(file.quantities.len());
        for q in file.quantities {
            let mut exps = vec![Rational64::zero(); file.dimensions.len()];
            for (symbol, repr) in q.dim {
                let idx = file
                    .dimensions
                    .iter()
                    .position(|d| *d == symbol)
                    .ok_or_else(|| DimensionalError::UnknownDimension(symbol.clone()))?;
                exps[idx] = match repr {
                    ExponentRepr::Integer(i) => Rational64::from_integer(i),
                    ExponentRepr::Text(s) => {
                        parse_rational(&s).ok_or(DimensionalError::BadExponent(s))?
                    }
                };
            }
            quantities.push(Quantity::new(q.name, q.value, DimensionVector::new(exps)));
        }
        QuantitySet::new(file.dimensions, quantities, file.repeating)
    }
}

impl From<QuantitySet> for SystemSpecFile {
    fn from(set: QuantitySet) -> Self {
        let quantities = set
            .quantities
            .into_iter()
            .map(|q| {
                let dim = set
                    .dimensions
                    .iter()
                    .zip(q.dim.exponents())
                    .filter(|(_, e)| !e.is_zero())
                    .map(|(s, e)| {
                        let repr = if e.is_integer() {
                            ExponentRepr::Integer(*e.numer())
                        } else {
                            ExponentRepr::Text(format_rational(e))
                        };
                        (s.clone(), repr)
                    })
                    .collect();
                QuantityFile { name: q.name, value: q.value, dim }
            })
            .collect();
        SystemSpecFile { dimensions: set.dimensions, quantities, repeating: set.repeating }
    }
}
