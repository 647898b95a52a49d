//! Validated domain types shared by every other module.
//!
//! All probability-carrying types enforce their simplex invariant at
//! construction: elements are nonnegative and sum to one within
//! [`SIMPLEX_TOL`]. Small drift (as accumulates over repeated filter steps)
//! is clamped and renormalized; anything worse is rejected. Values already
//! within a few ulps of exact are accepted unchanged so that algebraically
//! exact identities (e.g. a missing-data update being a no-op) also hold
//! bit-for-bit.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Absolute tolerance for simplex validation (sum-to-one and negativity).
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Drift below this is treated as exact and left untouched by validation.
/// Sums of up to ~100 rounded terms stay within this of 1.
const EXACT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("element {index} is negative ({value}) beyond tolerance")]
    NegativeElement { index: usize, value: f64 },
    #[error("elements sum to {sum}, outside tolerance {tol} of 1")]
    SumOutOfTolerance { sum: f64, tol: f64 },
    #[error("non-finite element at index {index}")]
    NonFinite { index: usize },
    #[error("counts sum to {total} which exceeds population {n}")]
    CountExceedsPopulation { total: u64, n: u64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidModel(String),
    #[error("parameter {name} violates constraint: {reason}")]
    ParamConstraint { name: String, reason: String },
}

/// Clamp tiny negatives to zero and normalize `values` to sum to one.
///
/// Returns the values unchanged when they are already nonnegative and sum to
/// one within a few ulps.
fn validate_simplex(mut values: Vec<f64>, tol: f64) -> Result<Vec<f64>, TypeError> {
    let mut needs_clamp = false;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(TypeError::NonFinite { index: i });
        }
        if v < 0.0 {
            if v < -tol {
                return Err(TypeError::NegativeElement { index: i, value: v });
            }
            needs_clamp = true;
        }
    }
    if needs_clamp {
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(TypeError::SumOutOfTolerance { sum, tol });
    }
    if (sum - 1.0).abs() > EXACT_TOL {
        for v in values.iter_mut() {
            *v /= sum;
        }
    }
    Ok(values)
}

/// A probability vector: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validate `values` as a probability vector, clamping and renormalizing
    /// drift within [`SIMPLEX_TOL`].
    pub fn new(values: Vec<f64>) -> Result<Self, TypeError> {
        Ok(ProbVector(validate_simplex(values, SIMPLEX_TOL)?))
    }

    /// Point mass on compartment `index`.
    pub fn vertex(m: usize, index: usize) -> Self {
        let mut v = vec![0.0; m];
        v[index] = 1.0;
        ProbVector(v)
    }

    pub fn uniform(m: usize) -> Self {
        ProbVector(vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Inner product with another vector of the same length.
    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Dense row-major `m x m` matrix of reals.
///
/// Small fixed-size helper shared by the stochastic/joint matrix newtypes;
/// compartment counts are tiny (m <= 10 for the builtin models) so a flat
/// `Vec<f64>` is plenty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    m: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, TypeError> {
        let m = rows.len();
        let mut data = Vec::with_capacity(m * m);
        for row in &rows {
            if row.len() != m {
                return Err(TypeError::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { m, data })
    }

    pub fn from_flat(m: usize, data: Vec<f64>) -> Result<Self, TypeError> {
        if data.len() != m * m {
            return Err(TypeError::DimensionMismatch {
                expected: m * m,
                got: data.len(),
            });
        }
        Ok(Matrix { m, data })
    }

    pub fn zeros(m: usize) -> Self {
        Matrix {
            m,
            data: vec![0.0; m * m],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.m + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for i in 0..self.m {
            for j in 0..self.m {
                out[j] += self.get(i, j);
            }
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// A row-stochastic matrix: each row is a probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochMatrix(Matrix);

impl StochMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, TypeError> {
        let validated = rows
            .into_iter()
            .map(|r| validate_simplex(r, SIMPLEX_TOL))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StochMatrix(Matrix::from_rows(validated)?))
    }

    pub fn identity(m: usize) -> Self {
        let mut mat = Matrix::zeros(m);
        for i in 0..m {
            mat.set(i, i, 1.0);
        }
        StochMatrix(mat)
    }

    pub fn m(&self) -> usize {
        self.0.m()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Left-multiply by a probability vector: returns `(pi^T K)^T`.
    pub fn propagate(&self, pi: &ProbVector) -> Result<ProbVector, TypeError> {
        let m = self.m();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let w = pi.get(i);
            if w == 0.0 {
                continue;
            }
            let row = self.row(i);
            for j in 0..m {
                out[j] += w * row[j];
            }
        }
        ProbVector::new(out)
    }
}

/// A joint probability matrix: all `m x m` entries are nonnegative and sum
/// to one. Houses joint distributions over transition pairs `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMatrix(Matrix);

impl JointMatrix {
    pub fn new(m: usize, flat: Vec<f64>) -> Result<Self, TypeError> {
        let validated = validate_simplex(flat, SIMPLEX_TOL)?;
        Ok(JointMatrix(Matrix::from_flat(m, validated)?))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, TypeError> {
        let m = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(m, flat)
    }

    pub fn m(&self) -> usize {
        self.0.m()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.0.row_sums()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.0.col_sums()
    }

    /// Column sums as a probability vector (the marginal over destination
    /// compartments).
    pub fn col_marginal(&self) -> Result<ProbVector, TypeError> {
        ProbVector::new(self.col_sums())
    }

    pub fn total(&self) -> f64 {
        self.0.total()
    }
}

/// Counts of individuals per compartment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVector(Vec<u64>);

impl CountVector {
    pub fn new(values: Vec<u64>) -> Self {
        CountVector(values)
    }

    pub fn zeros(m: usize) -> Self {
        CountVector(vec![0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> u64 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Compartment proportions `x / n`.
    pub fn proportions(&self, n: u64) -> Result<ProbVector, TypeError> {
        let total = self.total();
        if total != n {
            return Err(TypeError::CountExceedsPopulation { total, n });
        }
        ProbVector::new(self.0.iter().map(|&x| x as f64 / n as f64).collect())
    }
}

impl AsRef<[u64]> for CountVector {
    fn as_ref(&self) -> &[u64] {
        &self.0
    }
}

/// Counts of individuals transitioning between compartment pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    m: usize,
    data: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(m: usize) -> Self {
        CountMatrix {
            m,
            data: vec![0; m * m],
        }
    }

    pub fn from_flat(m: usize, data: Vec<u64>) -> Result<Self, TypeError> {
        if data.len() != m * m {
            return Err(TypeError::DimensionMismatch {
                expected: m * m,
                got: data.len(),
            });
        }
        Ok(CountMatrix { m, data })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: u64) {
        self.data[i * self.m + j] = v;
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.data
    }

    pub fn row_sums(&self) -> CountVector {
        CountVector::new(
            (0..self.m)
                .map(|i| self.data[i * self.m..(i + 1) * self.m].iter().sum())
                .collect(),
        )
    }

    pub fn col_sums(&self) -> CountVector {
        let mut out = vec![0u64; self.m];
        for i in 0..self.m {
            for j in 0..self.m {
                out[j] += self.get(i, j);
            }
        }
        CountVector::new(out)
    }

    pub fn total(&self) -> u64 {
        self.data.iter().sum()
    }
}

/// Named real parameters with declared constraints, as read from a model
/// configuration. Kernel builders pull what they need from here.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamRecord(BTreeMap<String, f64>);

/// Constraint a parameter must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    NonNegative,
    Positive,
    UnitInterval,
    Free,
}

impl Constraint {
    fn check(self, value: f64) -> bool {
        value.is_finite()
            && match self {
                Constraint::NonNegative => value >= 0.0,
                Constraint::Positive => value > 0.0,
                Constraint::UnitInterval => (0.0..=1.0).contains(&value),
                Constraint::Free => true,
            }
    }

    fn describe(self) -> &'static str {
        match self {
            Constraint::NonNegative => "must be >= 0",
            Constraint::Positive => "must be > 0",
            Constraint::UnitInterval => "must lie in [0, 1]",
            Constraint::Free => "must be finite",
        }
    }
}

impl ParamRecord {
    pub fn new() -> Self {
        ParamRecord(BTreeMap::new())
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    /// Fetch a required parameter and enforce its constraint.
    pub fn require(&self, name: &str, constraint: Constraint) -> Result<f64, TypeError> {
        let value = self.get(name).ok_or_else(|| TypeError::ParamConstraint {
            name: name.to_string(),
            reason: "missing".to_string(),
        })?;
        if !constraint.check(value) {
            return Err(TypeError::ParamConstraint {
                name: name.to_string(),
                reason: format!("{} ({})", constraint.describe(), value),
            });
        }
        Ok(value)
    }

    /// Fetch an optional parameter, falling back to `default`.
    pub fn get_or(
        &self,
        name: &str,
        constraint: Constraint,
        default: f64,
    ) -> Result<f64, TypeError> {
        match self.get(name) {
            None => Ok(default),
            Some(value) => {
                if !constraint.check(value) {
                    return Err(TypeError::ParamConstraint {
                        name: name.to_string(),
                        reason: format!("{} ({})", constraint.describe(), value),
                    });
                }
                Ok(value)
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.0.iter()
    }
}

/// Validate a raw sequence as a probability vector.
///
/// Thin named wrapper over [`ProbVector::new`] matching the construction-or-
/// error contract used throughout.
pub fn validate_prob_vector(values: &[f64]) -> Result<ProbVector, TypeError> {
    ProbVector::new(values.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn accepts_symmetric_vector_unchanged() {
        let p = validate_prob_vector(&[0.5, 0.5]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn accepts_simplex_vertex() {
        let p = validate_prob_vector(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_sum_out_of_tolerance() {
        let err = validate_prob_vector(&[0.5, 0.6]).unwrap_err();
        assert!(matches!(err, TypeError::SumOutOfTolerance { .. }));
    }

    #[test]
    fn rejects_negative_element() {
        let err = validate_prob_vector(&[1.2, -0.2]).unwrap_err();
        assert!(matches!(err, TypeError::NegativeElement { .. }));
    }

    #[test]
    fn clamps_and_renormalizes_small_drift() {
        let p = validate_prob_vector(&[0.5 + 3e-11, 0.5, -2e-11]).unwrap();
        assert!(p.get(2) == 0.0);
        assert_abs_diff_eq!(p.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let err = validate_prob_vector(&[f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, TypeError::NonFinite { .. }));
    }

    #[test]
    fn stoch_matrix_rows_validated() {
        let k = StochMatrix::new(vec![vec![0.9, 0.1], vec![0.0, 1.0]]).unwrap();
        assert_eq!(k.get(0, 0), 0.9);
        assert!(StochMatrix::new(vec![vec![0.9, 0.3], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn joint_matrix_total_validated() {
        let p = JointMatrix::new(2, vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(p.total(), 1.0, epsilon = 1e-15);
        assert!(JointMatrix::new(2, vec![0.5, 0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn propagate_identity_is_noop() {
        let k = StochMatrix::identity(3);
        let pi = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(k.propagate(&pi).unwrap().as_slice(), pi.as_slice());
    }

    #[test]
    fn propagate_single_row() {
        let k = StochMatrix::new(vec![vec![0.9, 0.1], vec![0.4, 0.6]]).unwrap();
        let pi = ProbVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(k.propagate(&pi).unwrap().as_slice(), &[0.9, 0.1]);
    }

    #[test]
    fn count_matrix_margins() {
        let mut z = CountMatrix::zeros(2);
        z.set(0, 0, 3);
        z.set(0, 1, 1);
        z.set(1, 1, 2);
        assert_eq!(z.row_sums().as_slice(), &[4, 2]);
        assert_eq!(z.col_sums().as_slice(), &[3, 3]);
        assert_eq!(z.total(), 6);
    }

    #[test]
    fn param_record_constraints() {
        let rec = ParamRecord::new().with("beta", 0.2).with("q", 1.5);
        assert_eq!(rec.require("beta", Constraint::NonNegative).unwrap(), 0.2);
        assert!(rec.require("q", Constraint::UnitInterval).is_err());
        assert!(rec.require("missing", Constraint::Free).is_err());
    }
}
