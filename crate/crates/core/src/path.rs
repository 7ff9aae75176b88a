//! Rectified affine conditional path `x_t = (1 - t) x0 + t x1`.
//!
//! t = 0 is the data side, t = 1 the noise (or source) side.

use crate::error::{Error, Result};
use crate::state::StateVec;

pub fn affine_path(x0: &StateVec, x1: &StateVec, t: f64) -> Result<StateVec> {
    x0.check_same_dim(x1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(StateVec::new(
        x0.iter()
            .zip(x1.iter())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect(),
    ))
}

/// Time derivative of [`affine_path`]: `x1 - x0`.
pub fn conditional_velocity(x0: &StateVec, x1: &StateVec) -> Result<StateVec> {
    x0.check_same_dim(x1)?;
    Ok(x1 - x0)
}
