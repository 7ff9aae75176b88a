//! Inversion-free editing: FlowAlign, FlowEdit and the plain two-trajectory
//! update, plus backward editing.
//!
//! Every method keeps three states per step: the edit state `x_t`, the
//! re-noised source `q_t = (1 - t) x_src + t eps` and the shifted point
//! `p_t = x_t - x_src + q_t`, so that `p_t - q_t = x_t - x_src` holds at
//! every step. Step `i` draws its noise from substream `i` of the run seed.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::field::{cfg_velocity, Label, VelocityField};
use crate::grid::TimeGrid;
use crate::rng::RandomStream;
use crate::state::StateVec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EditMethod {
    FlowAlign,
    /// Dual guidance: `cfg(p, tgt, omega_tgt) - cfg(q, src, omega_src)`.
    FlowEdit { omega_src: f64, omega_tgt: f64 },
    /// `v(p, c_tgt) - v(q, c_src)` with no guidance and no consistency term.
    Plain,
}

impl EditMethod {
    pub const FLOWEDIT_DEFAULT: EditMethod = EditMethod::FlowEdit {
        omega_src: 3.0,
        omega_tgt: 13.5,
    };

    pub fn name(&self) -> &'static str {
        match self {
            EditMethod::FlowAlign => "flowalign",
            EditMethod::FlowEdit { .. } => "flowedit",
            EditMethod::Plain => "plain",
        }
    }

    /// Velocity evaluations per step.
    pub fn nfe_per_step(&self) -> usize {
        match self {
            EditMethod::FlowAlign => 3,
            EditMethod::FlowEdit { .. } => 4,
            EditMethod::Plain => 2,
        }
    }
}

/// Base label of the guidance applied to `p_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CfgBase {
    #[default]
    Null,
    Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditParams {
    pub method: EditMethod,
    pub omega: f64,
    pub zeta: f64,
    /// When set, the consistency weight of step `i` is `-gamma(t_i) dt_i`
    /// for this terminal weight instead of the constant `zeta`.
    pub zeta_from_eta: Option<f64>,
    pub cfg_base: CfgBase,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl EditParams {
    pub const DEFAULT_OMEGA: f64 = 7.5;
    pub const DEFAULT_ZETA: f64 = 0.01;

    pub fn flowalign(grid: TimeGrid, seed: u64) -> Self {
        EditParams {
            method: EditMethod::FlowAlign,
            omega: Self::DEFAULT_OMEGA,
            zeta: Self::DEFAULT_ZETA,
            zeta_from_eta: None,
            cfg_base: CfgBase::Null,
            grid,
            seed,
        }
    }

    pub fn flowedit(grid: TimeGrid, seed: u64) -> Self {
        EditParams {
            method: EditMethod::FLOWEDIT_DEFAULT,
            zeta: 0.0,
            ..Self::flowalign(grid, seed)
        }
    }

    pub fn plain(grid: TimeGrid, seed: u64) -> Self {
        EditParams {
            method: EditMethod::Plain,
            omega: 1.0,
            zeta: 0.0,
            ..Self::flowalign(grid, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::invalid("omega must be finite and non-negative"));
        }
        if !(self.zeta >= 0.0) || !self.zeta.is_finite() {
            return Err(Error::invalid("zeta must be finite and non-negative"));
        }
        if let Some(eta) = self.zeta_from_eta {
            if !(eta > 0.0) {
                return Err(Error::invalid("eta must be positive"));
            }
        }
        if let EditMethod::FlowEdit {
            omega_src,
            omega_tgt,
        } = self.method
        {
            if !(omega_src >= 0.0 && omega_tgt >= 0.0) {
                return Err(Error::invalid("flowedit guidance scales must be non-negative"));
            }
        }
        Ok(())
    }

    fn zeta_at(&self, t: f64, dt: f64) -> Result<f64> {
        match self.zeta_from_eta {
            None => Ok(self.zeta),
            Some(eta) => Ok(-gamma_eval(eta, t)? * dt),
        }
    }
}

/// `gamma(t) = -eta / (1 - eta t)`.
pub fn gamma_eval(eta: f64, t: f64) -> Result<f64> {
    let gap = 1.0 - eta * t;
    if gap.abs() < 1e-9 {
        return Err(Error::Singularity { eta, t, gap });
    }
    Ok(-eta / gap)
}

/// Inputs shared by every single-step update.
#[derive(Debug, Clone)]
pub struct StepInput<'a> {
    pub x: &'a StateVec,
    pub x_src: &'a StateVec,
    pub t: f64,
    pub dt: f64,
    pub c_src: Label,
    pub c_tgt: Label,
    pub eps: &'a StateVec,
}

impl StepInput<'_> {
    fn check(&self, dim: usize) -> Result<()> {
        self.x.check_dim(dim)?;
        self.x_src.check_dim(dim)?;
        self.eps.check_dim(dim)?;
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(Error::invalid(format!("step time must lie in (0, 1], got {}", self.t)));
        }
        if !(self.dt < 0.0) || self.t + self.dt < -1e-12 {
            return Err(Error::invalid(format!("dt must be negative and stay in [0, t], got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub x: StateVec,
    pub q: StateVec,
    pub p: StateVec,
    pub v_q: StateVec,
    pub v_p: StateVec,
    /// `q - t v_q`
    pub eq0: StateVec,
    /// `p - t v_p`
    pub ep0: StateVec,
    pub noise_id: u64,
}

impl StepRecord {
    /// Drift `v_p - v_q` of the step.
    pub fn drift(&self) -> StateVec {
        &self.v_p - &self.v_q
    }
}

struct StepParts {
    q: StateVec,
    p: StateVec,
    v_q: StateVec,
    v_p: StateVec,
}

fn pair_points(input: &StepInput<'_>) -> (StateVec, StateVec) {
    let t = input.t;
    let q = StateVec::new(
        input
            .x_src
            .iter()
            .zip(input.eps.iter())
            .map(|(s, e)| (1.0 - t) * s + t * e)
            .collect(),
    );
    let p = StateVec::new(
        input
            .x
            .iter()
            .zip(input.x_src.iter())
            .zip(q.iter())
            .map(|((x, s), q)| x - s + q)
            .collect(),
    );
    (q, p)
}

fn finish(
    input: &StepInput<'_>,
    parts: StepParts,
    zeta: f64,
    step: usize,
    noise_id: u64,
) -> Result<(StateVec, StepRecord)> {
    let t = input.t;
    let eq0 = parts.q.axpy(-t, &parts.v_q);
    let ep0 = parts.p.axpy(-t, &parts.v_p);
    let next = StateVec::new(
        (0..input.x.dim())
            .map(|i| {
                input.x[i] + (parts.v_p[i] - parts.v_q[i]) * input.dt + zeta * (eq0[i] - ep0[i])
            })
            .collect(),
    );
    if !next.is_finite() {
        return Err(Error::NonFinite {
            step,
            t,
            context: "edit step",
        });
    }
    Ok((
        next,
        StepRecord {
            step,
            t,
            dt: input.dt,
            x: input.x.clone(),
            q: parts.q,
            p: parts.p,
            v_q: parts.v_q,
            v_p: parts.v_p,
            eq0,
            ep0,
            noise_id,
        },
    ))
}

/// One FlowAlign update:
/// `x + (v_p - v_q) dt + zeta (E[q0 | q] - E[p0 | p])` with
/// `v_p = cfg(p; base -> c_tgt; omega)` and `v_q = v(q, c_src)`.
pub fn flowalign_step<F: VelocityField + ?Sized>(
    field: &F,
    input: &StepInput<'_>,
    omega: f64,
    zeta: f64,
    cfg_base: CfgBase,
) -> Result<(StateVec, StepRecord)> {
    input.check(field.dim())?;
    let (q, p) = pair_points(input);
    let base = match cfg_base {
        CfgBase::Null => Label::Null,
        CfgBase::Source => input.c_src,
    };
    let v_p = cfg_velocity(field, &p, input.t, base, input.c_tgt, omega)?;
    let v_q = field.velocity(&q, input.t, input.c_src)?;
    finish(input, StepParts { q, p, v_q, v_p }, zeta, 0, 0)
}

/// The unregularized two-trajectory update `x + (v(p, c_tgt) - v(q, c_src)) dt`.
pub fn plain_step<F: VelocityField + ?Sized>(
    field: &F,
    input: &StepInput<'_>,
) -> Result<(StateVec, StepRecord)> {
    input.check(field.dim())?;
    let (q, p) = pair_points(input);
    let v_p = field.velocity(&p, input.t, input.c_tgt)?;
    let v_q = field.velocity(&q, input.t, input.c_src)?;
    finish(input, StepParts { q, p, v_q, v_p }, 0.0, 0, 0)
}

/// FlowEdit update with dual guidance, both guidances based on the null label.
pub fn flowedit_step<F: VelocityField + ?Sized>(
    field: &F,
    input: &StepInput<'_>,
    omega_src: f64,
    omega_tgt: f64,
) -> Result<(StateVec, StepRecord)> {
    input.check(field.dim())?;
    let (q, p) = pair_points(input);
    let v_p = cfg_velocity(field, &p, input.t, Label::Null, input.c_tgt, omega_tgt)?;
    let v_q = cfg_velocity(field, &q, input.t, Label::Null, input.c_src, omega_src)?;
    finish(input, StepParts { q, p, v_q, v_p }, 0.0, 0, 0)
}

/// Per-step record of an edit run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub method: &'static str,
    pub x_src: StateVec,
    pub c_src: Label,
    pub c_tgt: Label,
    pub steps: Vec<StepRecord>,
    pub terminal: StateVec,
}

impl TrajectoryLog {
    /// Largest `|p - q - (x - x_src)|` entry over all steps.
    pub fn key_equality_residual(&self) -> f64 {
        self.steps
            .iter()
            .map(|r| {
                (0..r.x.dim())
                    .map(|i| (r.p[i] - r.q[i] - (r.x[i] - self.x_src[i])).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn check_key_equality(&self, tol: f64) -> Result<()> {
        let r = self.key_equality_residual();
        if r <= tol {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "key equality violated: residual {r:e} exceeds {tol:e}"
            )))
        }
    }

    /// CSV header: `step,t,dt`, then `x_i`, `q_i`, `p_i`, `v_q_i`, `v_p_i`,
    /// `eq0_i`, `ep0_i` for every coordinate `i`, then `noise_id`.
    pub fn csv_header(dim: usize) -> String {
        let mut cols = vec!["step".to_string(), "t".into(), "dt".into()];
        for name in ["x", "q", "p", "v_q", "v_p", "eq0", "ep0"] {
            cols.extend((0..dim).map(|i| format!("{name}_{i}")));
        }
        cols.push("noise_id".into());
        cols.join(",")
    }

    /// Floats are written with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let dim = self.x_src.dim();
        let mut out = Self::csv_header(dim);
        out.push('\n');
        for r in &self.steps {
            write!(out, "{},{:.16e},{:.16e}", r.step, r.t, r.dt).unwrap();
            for v in [&r.x, &r.q, &r.p, &r.v_q, &r.v_p, &r.eq0, &r.ep0] {
                for x in v.iter() {
                    write!(out, ",{x:.16e}").unwrap();
                }
            }
            writeln!(out, ",{}", r.noise_id).unwrap();
        }
        out
    }
}

/// Runs the configured method from `x_src` over the active grid steps.
pub fn run_edit<F: VelocityField + ?Sized>(
    field: &F,
    x_src: &StateVec,
    c_src: Label,
    c_tgt: Label,
    params: &EditParams,
) -> Result<(StateVec, TrajectoryLog)> {
    params.validate()?;
    x_src.check_dim(field.dim())?;
    let root = RandomStream::new(params.seed);
    let mut x = x_src.clone();
    let mut steps = Vec::with_capacity(params.grid.active_steps());
    for s in params.grid.steps() {
        let noise_id = s.index as u64;
        let eps = root.substream(noise_id).normal_vec(field.dim());
        let input = StepInput {
            x: &x,
            x_src,
            t: s.t,
            dt: s.dt(),
            c_src,
            c_tgt,
            eps: &eps,
        };
        let (next, mut rec) = match params.method {
            EditMethod::FlowAlign => flowalign_step(
                field,
                &input,
                params.omega,
                params.zeta_at(s.t, s.dt())?,
                params.cfg_base,
            ),
            EditMethod::FlowEdit {
                omega_src,
                omega_tgt,
            } => flowedit_step(field, &input, omega_src, omega_tgt),
            EditMethod::Plain => plain_step(field, &input),
        }
        .map_err(|e| match e {
            Error::NonFinite { t, context, .. } => Error::NonFinite {
                step: s.index,
                t,
                context,
            },
            other => other,
        })?;
        rec.step = s.index;
        rec.noise_id = noise_id;
        steps.push(rec);
        x = next;
    }
    let log = TrajectoryLog {
        method: params.method.name(),
        x_src: x_src.clone(),
        c_src,
        c_tgt,
        steps,
        terminal: x.clone(),
    };
    Ok((x, log))
}

/// FlowAlign edit; `params.method` is overridden to FlowAlign.
pub fn flowalign_edit<F: VelocityField + ?Sized>(
    field: &F,
    x_src: &StateVec,
    c_src: Label,
    c_tgt: Label,
    params: &EditParams,
) -> Result<(StateVec, TrajectoryLog)> {
    let params = EditParams {
        method: EditMethod::FlowAlign,
        ..params.clone()
    };
    run_edit(field, x_src, c_src, c_tgt, &params)
}

pub fn flowedit_edit<F: VelocityField + ?Sized>(
    field: &F,
    x_src: &StateVec,
    c_src: Label,
    c_tgt: Label,
    grid: &TimeGrid,
    omega_src: f64,
    omega_tgt: f64,
    seed: u64,
) -> Result<(StateVec, TrajectoryLog)> {
    let params = EditParams {
        method: EditMethod::FlowEdit {
            omega_src,
            omega_tgt,
        },
        ..EditParams::flowedit(grid.clone(), seed)
    };
    run_edit(field, x_src, c_src, c_tgt, &params)
}

/// Reconstructs the source from an edit by re-running the same method with
/// the edit as the source image and the labels swapped.
pub fn backward_edit<F: VelocityField + ?Sized>(
    field: &F,
    x_edited: &StateVec,
    c_src: Label,
    c_tgt: Label,
    params: &EditParams,
) -> Result<StateVec> {
    Ok(run_edit(field, x_edited, c_tgt, c_src, params)?.0)
}
