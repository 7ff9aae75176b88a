//! Euler integration over a time grid and the two noise-bridging baselines.

use crate::error::{Error, Result};
use crate::field::{Conditioned, Guided, Label, VelocityField, VelocitySource};
use crate::grid::TimeGrid;
use crate::rng::RandomStream;
use crate::state::StateVec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Along the grid, from `times[skip]` down to 0.
    Forward,
    /// From 0 back up to `times[skip]`. Each interval evaluates the field at
    /// its upper time, the time the forward pass would pair with it.
    Reversed,
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub terminal: StateVec,
    /// States visited, starting with `x_start`.
    pub path: Vec<StateVec>,
    /// `sum |dt| * |v|` over the steps taken.
    pub path_length: f64,
}

/// One Euler step `x + v dt`; aborts on a non-finite result.
fn euler<S: VelocitySource + ?Sized>(
    source: &S,
    x: &StateVec,
    t_eval: f64,
    dt: f64,
    step: usize,
) -> Result<(StateVec, f64)> {
    let v = source.eval(x, t_eval)?;
    let next = x.axpy(dt, &v);
    if !next.is_finite() {
        return Err(Error::NonFinite {
            step,
            t: t_eval,
            context: "euler integration",
        });
    }
    Ok((next, dt.abs() * v.norm()))
}

pub fn integrate<S: VelocitySource + ?Sized>(
    source: &S,
    x_start: &StateVec,
    grid: &TimeGrid,
    direction: Direction,
) -> Result<Integration> {
    x_start.check_dim(source.dim())?;
    let mut x = x_start.clone();
    let mut path = Vec::with_capacity(grid.active_steps() + 1);
    path.push(x.clone());
    let mut path_length = 0.0;
    match direction {
        Direction::Forward => {
            for s in grid.steps() {
                let (next, len) = euler(source, &x, s.t, s.dt(), s.index)?;
                x = next;
                path_length += len;
                path.push(x.clone());
            }
        }
        Direction::Reversed => {
            for s in grid.steps().rev() {
                let (next, len) = euler(source, &x, s.t, -s.dt(), s.index)?;
                x = next;
                path_length += len;
                path.push(x.clone());
            }
        }
    }
    Ok(Integration {
        terminal: x,
        path,
        path_length,
    })
}

/// Integrates from `x_start` at `t_start` to 0, taking a partial first step
/// when `t_start` falls between grid points.
pub fn integrate_from<S: VelocitySource + ?Sized>(
    source: &S,
    x_start: &StateVec,
    grid: &TimeGrid,
    t_start: f64,
) -> Result<StateVec> {
    x_start.check_dim(source.dim())?;
    let mut times = vec![t_start];
    times.extend(grid.times().iter().copied().filter(|&t| t < t_start));
    let mut x = x_start.clone();
    for (i, w) in times.windows(2).enumerate() {
        x = euler(source, &x, w[0], w[1] - w[0], i)?.0;
    }
    Ok(x)
}

/// Draws `x1 ~ N(0, I)` and integrates it to `t = 0`.
pub fn generate<S: VelocitySource + ?Sized>(
    source: &S,
    grid: &TimeGrid,
    stream: &mut RandomStream,
) -> Result<StateVec> {
    if grid.skip() != 0 {
        return Err(Error::invalid("generation integrates the whole grid; skip must be 0"));
    }
    let x1 = stream.normal_vec(source.dim());
    Ok(integrate(source, &x1, grid, Direction::Forward)?.terminal)
}

/// Noise latent of `x_src` under the null label.
pub fn ddib_invert<F: VelocityField + ?Sized>(
    field: &F,
    x_src: &StateVec,
    grid: &TimeGrid,
) -> Result<StateVec> {
    let null = Conditioned::new(field, Label::Null);
    Ok(integrate(&null, x_src, grid, Direction::Reversed)?.terminal)
}

/// Inverts under the null label, then samples under CFG(null -> c_tgt).
/// `c_src` is unused by the inversion pass.
pub fn ddib_edit<F: VelocityField + ?Sized>(
    field: &F,
    x_src: &StateVec,
    _c_src: Label,
    c_tgt: Label,
    grid: &TimeGrid,
    omega: f64,
) -> Result<StateVec> {
    let latent = ddib_invert(field, x_src, grid)?;
    let guided = Guided::new(field, Label::Null, c_tgt, omega);
    Ok(integrate(&guided, &latent, grid, Direction::Forward)?.terminal)
}

/// Re-noises `x_src` to `t_start` and integrates under CFG(null -> c_tgt).
pub fn sdedit_edit<F: VelocityField + ?Sized>(
    field: &F,
    x_src: &StateVec,
    c_tgt: Label,
    grid: &TimeGrid,
    t_start: f64,
    omega: f64,
    stream: &mut RandomStream,
) -> Result<StateVec> {
    if !(0.0..=1.0).contains(&t_start) {
        return Err(Error::invalid(format!("t_start must lie in [0, 1], got {t_start}")));
    }
    x_src.check_dim(field.dim())?;
    if t_start == 0.0 {
        return Ok(x_src.clone());
    }
    let eps = stream.normal_vec(field.dim());
    let x = crate::path::affine_path(x_src, &eps, t_start)?;
    let guided = Guided::new(field, Label::Null, c_tgt, omega);
    integrate_from(&guided, &x, grid, t_start)
}
