//! Dense real vectors in the sample space.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// A point in the d-dimensional sample space.
#[derive(Clone, PartialEq, Default)]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn new(values: Vec<f64>) -> Self {
        StateVec(values)
    }

    pub fn zeros(dim: usize) -> Self {
        StateVec(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        StateVec(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            })
        }
    }

    pub fn check_same_dim(&self, other: &StateVec) -> Result<()> {
        other.check_dim(self.dim())
    }

    pub fn dot(&self, other: &StateVec) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &StateVec) -> StateVec {
        StateVec(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        )
    }

    pub fn scale(&self, alpha: f64) -> StateVec {
        StateVec(self.0.iter().map(|v| alpha * v).collect())
    }

    /// Mean squared difference over the coordinates selected by `mask`.
    pub fn masked_mse(&self, other: &StateVec, mask: &[bool]) -> f64 {
        let (sum, n) = self
            .0
            .iter()
            .zip(&other.0)
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), ((a, b), _)| (s + (a - b) * (a - b), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn mse(&self, other: &StateVec) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        (self - other).norm_sq() / self.dim() as f64
    }
}

impl fmt::Debug for StateVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl From<Vec<f64>> for StateVec {
    fn from(v: Vec<f64>) -> Self {
        StateVec(v)
    }
}

impl From<&[f64]> for StateVec {
    fn from(v: &[f64]) -> Self {
        StateVec(v.to_vec())
    }
}

impl Index<usize> for StateVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for StateVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &StateVec {
    type Output = StateVec;
    fn add(self, rhs: &StateVec) -> StateVec {
        StateVec(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &StateVec {
    type Output = StateVec;
    fn sub(self, rhs: &StateVec) -> StateVec {
        StateVec(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<&StateVec> for f64 {
    type Output = StateVec;
    fn mul(self, rhs: &StateVec) -> StateVec {
        rhs.scale(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let a = StateVec::new(vec![1.0, 2.0]);
        let b = StateVec::new(vec![3.0, -1.0]);
        assert_eq!((&a + &b).as_slice(), &[4.0, 1.0]);
        assert_eq!((&a - &b).as_slice(), &[-2.0, 3.0]);
        assert_eq!(a.axpy(2.0, &b).as_slice(), &[7.0, 0.0]);
        assert_eq!(a.dot(&b), 1.0);
        assert_eq!(b.max_abs(), 3.0);
    }

    #[test]
    fn masked_mse_ignores_unmasked() {
        let a = StateVec::new(vec![0.0, 0.0, 0.0]);
        let b = StateVec::new(vec![10.0, 1.0, 3.0]);
        assert_eq!(a.masked_mse(&b, &[false, true, true]), 5.0);
        assert_eq!(a.masked_mse(&b, &[false, false, false]), 0.0);
    }

    #[test]
    fn dim_check() {
        let a = StateVec::zeros(3);
        assert!(a.check_dim(3).is_ok());
        assert!(matches!(
            a.check_dim(2),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }
}
