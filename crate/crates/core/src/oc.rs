//! Terminal-regularized control problem behind the FlowAlign update.
//!
//! Discretized on the active intervals of a grid (times `t_0 > ... > t_N = 0`,
//! `dt_i = t_{i+1} - t_i < 0`):
//!
//! ```text
//! x_{i+1} = x_i + u_i dt_i,   x_0 = x_start
//! J(u)    = sum_i 1/2 |u_i - a_i|^2 |dt_i| + eta/2 |x_N - x_src|^2
//! ```
//!
//! [`lemma1_control`] evaluates the reference closed form, [`discrete_oc_solve`]
//! minimizes `J` numerically and [`minimizer_control`] is the exact minimizer
//! of `J`. The two closed forms differ in the sign of the costate; see the
//! tests for the stationarity condition each of them satisfies.

use crate::edit::TrajectoryLog;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::state::StateVec;

#[derive(Debug, Clone)]
pub struct OCProblem {
    grid: TimeGrid,
    dts: Vec<f64>,
    /// Drift on each active interval.
    pub a: Vec<StateVec>,
    pub x_start: StateVec,
    pub x_src: StateVec,
    pub eta: f64,
}

/// One control vector per active interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSeq {
    pub u: Vec<StateVec>,
}

impl ControlSeq {
    /// Largest entry of `|self - other|`.
    pub fn max_diff(&self, other: &ControlSeq) -> f64 {
        self.u
            .iter()
            .zip(&other.u)
            .map(|(a, b)| (a - b).max_abs())
            .fold(0.0, f64::max)
    }
}

impl OCProblem {
    pub fn new(
        grid: TimeGrid,
        a: Vec<StateVec>,
        x_start: StateVec,
        x_src: StateVec,
        eta: f64,
    ) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid("eta must be positive"));
        }
        if a.len() != grid.active_steps() {
            return Err(Error::DimensionMismatch {
                expected: grid.active_steps(),
                got: a.len(),
            });
        }
        let d = x_start.dim();
        x_src.check_dim(d)?;
        for ai in &a {
            ai.check_dim(d)?;
        }
        let t0 = grid.start_time();
        let gap = 1.0 - eta * t0;
        if gap.abs() < 1e-9 {
            return Err(Error::Singularity { eta, t: t0, gap });
        }
        let dts = grid.steps().map(|s| s.dt()).collect();
        Ok(OCProblem {
            grid,
            dts,
            a,
            x_start,
            x_src,
            eta,
        })
    }

    pub fn dim(&self) -> usize {
        self.x_start.dim()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dts(&self) -> &[f64] {
        &self.dts
    }

    pub fn t0(&self) -> f64 {
        self.grid.start_time()
    }

    /// Terminal state of the Euler dynamics under `u`.
    pub fn rollout(&self, u: &ControlSeq) -> StateVec {
        u.u.iter()
            .zip(&self.dts)
            .fold(self.x_start.clone(), |x, (ui, dt)| x.axpy(*dt, ui))
    }

    pub fn objective(&self, u: &ControlSeq) -> f64 {
        let running: f64 = u
            .u
            .iter()
            .zip(&self.a)
            .zip(&self.dts)
            .map(|((ui, ai), dt)| 0.5 * (ui - ai).norm_sq() * dt.abs())
            .sum();
        let xn = self.rollout(u);
        running + 0.5 * self.eta * (&xn - &self.x_src).norm_sq()
    }

    /// Gradient of [`Self::objective`] with respect to every `u_i`.
    pub fn gradient(&self, u: &ControlSeq) -> Vec<StateVec> {
        let r = (&self.rollout(u) - &self.x_src).scale(self.eta);
        u.u.iter()
            .zip(&self.a)
            .zip(&self.dts)
            .map(|((ui, ai), dt)| (ui - ai).scale(dt.abs()).axpy(*dt, &r))
            .collect()
    }

    /// Left-endpoint quadrature `sum_i a_i dt_i` of the drift from `t_0` to 0.
    pub fn drift_integral(&self) -> StateVec {
        self.a
            .iter()
            .zip(&self.dts)
            .fold(StateVec::zeros(self.dim()), |acc, (ai, dt)| acc.axpy(*dt, ai))
    }

    fn shifted(&self, p: &StateVec) -> ControlSeq {
        ControlSeq {
            u: self.a.iter().map(|ai| ai - p).collect(),
        }
    }
}

/// Reference closed form `u_i = a_i - p` with constant costate
/// `p = eta (x_start + v - x_src) / (1 - eta t_0)`, `v = sum_i a_i dt_i`.
pub fn lemma1_control(prob: &OCProblem) -> ControlSeq {
    let gap = 1.0 - prob.eta * prob.t0();
    let resid = &(&prob.x_start + &prob.drift_integral()) - &prob.x_src;
    prob.shifted(&resid.scale(prob.eta / gap))
}

/// Exact minimizer of the discrete objective: `u_i = a_i + r` with
/// `r = eta (x_start + v - x_src) / (1 + eta t_0) = eta (x_N - x_src)`.
pub fn minimizer_control(prob: &OCProblem) -> ControlSeq {
    let resid = &(&prob.x_start + &prob.drift_integral()) - &prob.x_src;
    prob.shifted(&resid.scale(-prob.eta / (1.0 + prob.eta * prob.t0())))
}

/// Costate sequence `p_i = a_i - u_i`.
pub fn costate(prob: &OCProblem, u: &ControlSeq) -> Vec<StateVec> {
    prob.a.iter().zip(&u.u).map(|(a, u)| a - u).collect()
}

/// Largest entry of `|p_i - mean(p)|`.
pub fn costate_spread(p: &[StateVec]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let mean = p
        .iter()
        .fold(StateVec::zeros(p[0].dim()), |acc, x| &acc + x)
        .scale(1.0 / p.len() as f64);
    p.iter().map(|x| (x - &mean).max_abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct OcSolution {
    pub control: ControlSeq,
    pub iters: usize,
    pub grad_norm: f64,
    /// Objective before the first iteration and after each one.
    pub objective_trace: Vec<f64>,
}

/// Preconditioned gradient descent on the discrete objective.
///
/// Each `u_i` moves by `-lr * grad_i / |dt_i|`; the preconditioned Hessian is
/// `I + eta s s^T` with `|s|^2 = t_0`, so any `lr <= 1 / (1 + eta t_0)`
/// decreases the objective monotonically. `lr = None` picks that bound.
/// Converged when the Euclidean norm of the plain gradient is at most `1e-10`.
pub fn discrete_oc_solve(prob: &OCProblem, iters: usize, lr: Option<f64>) -> Result<OcSolution> {
    let lr = lr.unwrap_or(1.0 / (1.0 + prob.eta * prob.t0()));
    if !(lr > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let mut u = ControlSeq {
        u: prob.a.clone(),
    };
    let mut trace = vec![prob.objective(&u)];
    let norm = |g: &[StateVec]| g.iter().map(|v| v.norm_sq()).sum::<f64>().sqrt();
    let mut grad = prob.gradient(&u);
    let mut grad_norm = norm(&grad);
    for k in 0..iters {
        if grad_norm <= 1e-10 {
            return Ok(OcSolution {
                control: u,
                iters: k,
                grad_norm,
                objective_trace: trace,
            });
        }
        for ((ui, gi), dt) in u.u.iter_mut().zip(&grad).zip(prob.dts()) {
            *ui = ui.axpy(-lr / dt.abs(), gi);
        }
        trace.push(prob.objective(&u));
        grad = prob.gradient(&u);
        grad_norm = norm(&grad);
    }
    if grad_norm <= 1e-10 {
        return Ok(OcSolution {
            control: u,
            iters,
            grad_norm,
            objective_trace: trace,
        });
    }
    Err(Error::NotConverged { iters, grad_norm })
}

/// Per-step residual of the first-order Tweedie approximation on a logged
/// edit: `|(x_i + v_i - x_src) - (E[p0|p_i] - E[q0|q_i])|` with
/// `v_i = sum_{j >= i} (v_p - v_q)_j dt_j` integrated over the logged steps.
pub fn prop1_residual(log: &TrajectoryLog) -> Vec<f64> {
    let n = log.steps.len();
    let dim = log.x_src.dim();
    let mut tail = vec![StateVec::zeros(dim); n + 1];
    for i in (0..n).rev() {
        let r = &log.steps[i];
        tail[i] = tail[i + 1].axpy(r.dt, &r.drift());
    }
    log.steps
        .iter()
        .zip(&tail)
        .map(|(r, v)| {
            let lhs = &(&r.x + v) - &log.x_src;
            let rhs = &r.ep0 - &r.eq0;
            (&lhs - &rhs).norm()
        })
        .collect()
}
