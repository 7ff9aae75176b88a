//! FlowAlign drift used as a parameter gradient for a differentiable
//! generator `g(psi, view) = A_view psi + b_view`.

use crate::error::{Error, Result};
use crate::field::{cfg_velocity, Label, VelocityField};
use crate::rng::RandomStream;
use crate::state::StateVec;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    /// Row-major `dim x params` matrix.
    pub a: Vec<f64>,
    pub b: StateVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGenerator {
    dim: usize,
    n_params: usize,
    views: Vec<View>,
}

impl LinearGenerator {
    pub fn new(dim: usize, n_params: usize, views: Vec<View>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("generator needs at least one view"));
        }
        for v in &views {
            if v.a.len() != dim * n_params {
                return Err(Error::DimensionMismatch {
                    expected: dim * n_params,
                    got: v.a.len(),
                });
            }
            v.b.check_dim(dim)?;
        }
        Ok(LinearGenerator {
            dim,
            n_params,
            views,
        })
    }

    /// `A = I`, `b = 0`.
    pub fn identity(dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        LinearGenerator {
            dim,
            n_params: dim,
            views: vec![View {
                a,
                b: StateVec::zeros(dim),
            }],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    fn view(&self, view: usize) -> Result<&View> {
        self.views
            .get(view)
            .ok_or_else(|| Error::invalid(format!("view {view} out of range")))
    }

    pub fn render(&self, psi: &StateVec, view: usize) -> Result<StateVec> {
        psi.check_dim(self.n_params)?;
        let v = self.view(view)?;
        Ok(StateVec::new(
            (0..self.dim)
                .map(|i| {
                    let row = &v.a[i * self.n_params..(i + 1) * self.n_params];
                    v.b[i] + row.iter().zip(psi.iter()).map(|(a, p)| a * p).sum::<f64>()
                })
                .collect(),
        ))
    }

    /// `A_view^T y`.
    pub fn pullback(&self, y: &StateVec, view: usize) -> Result<StateVec> {
        y.check_dim(self.dim)?;
        let v = self.view(view)?;
        let mut out = vec![0.0; self.n_params];
        for i in 0..self.dim {
            let row = &v.a[i * self.n_params..(i + 1) * self.n_params];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * y[i];
            }
        }
        Ok(StateVec::new(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSettings {
    pub c_src: Label,
    pub c_tgt: Label,
    pub omega: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    /// `A^T bracket`
    pub grad: StateVec,
    /// `v_p - v_q + gamma (E[p0|p] - E[q0|q])` in sample space.
    pub bracket: StateVec,
    /// `gamma (E[p0|p] - E[q0|q])`
    pub consistency: StateVec,
    pub p: StateVec,
    pub q: StateVec,
    pub v_p: StateVec,
    pub v_q: StateVec,
}

/// Gradient of the FlowAlign loss with respect to the generator parameters,
/// treating velocity Jacobians as identity. `eps` is the step noise.
pub fn flowalign_param_grad<F: VelocityField + ?Sized>(
    field: &F,
    gen: &LinearGenerator,
    psi: &StateVec,
    psi_src: &StateVec,
    view: usize,
    t: f64,
    settings: &GradSettings,
    eps: &StateVec,
) -> Result<ParamGrad> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("t must lie in (0, 1], got {t}")));
    }
    eps.check_dim(gen.dim())?;
    let x_src = gen.render(psi_src, view)?;
    let x = gen.render(psi, view)?;
    let q = x_src.scale(1.0 - t).axpy(t, eps);
    let p = &(&x - &x_src) + &q;
    let v_p = cfg_velocity(field, &p, t, Label::Null, settings.c_tgt, settings.omega)?;
    let v_q = field.velocity(&q, t, settings.c_src)?;
    let ep0 = p.axpy(-t, &v_p);
    let eq0 = q.axpy(-t, &v_q);
    let consistency = (&ep0 - &eq0).scale(settings.gamma);
    let bracket = &(&v_p - &v_q) + &consistency;
    let grad = gen.pullback(&bracket, view)?;
    Ok(ParamGrad {
        grad,
        bracket,
        consistency,
        p,
        q,
        v_p,
        v_q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear interpolation from `start` at the first step to `end` at the last.
    Linear { start: f64, end: f64 },
}

impl LrSchedule {
    pub fn at(&self, step: usize, steps: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Linear { start, end } => {
                let f = if steps <= 1 {
                    0.0
                } else {
                    step as f64 / (steps - 1) as f64
                };
                start + (end - start) * f
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub steps: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub lr: LrSchedule,
    pub settings: GradSettings,
    pub seed: u64,
}

impl DistillConfig {
    pub fn new(settings: GradSettings, steps: usize, lr: LrSchedule, seed: u64) -> Self {
        DistillConfig {
            steps,
            t_max: 0.98,
            t_min: 0.02,
            lr,
            settings,
            seed,
        }
    }

    /// Time of step `i`, decreasing linearly from `t_max` to `t_min`.
    pub fn time_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.t_max;
        }
        let f = step as f64 / (self.steps - 1) as f64;
        self.t_max + (self.t_min - self.t_max) * f
    }
}

#[derive(Debug, Clone)]
pub struct DistillTrace {
    pub step: usize,
    pub t: f64,
    pub view: usize,
    /// Target-class log-density of the render after the update.
    pub target_log_density: f64,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub psi: StateVec,
    pub trace: Vec<DistillTrace>,
}

/// Descends the FlowAlign parameter gradient from `psi_src` (the source
/// parameters anchor every step). Step `i` draws the view index and then
/// the noise from substream `i`. `log_density` scores renders for the trace.
pub fn distill_optimize<F: VelocityField + ?Sized>(
    field: &F,
    gen: &LinearGenerator,
    psi_init: &StateVec,
    psi_src: &StateVec,
    cfg: &DistillConfig,
    log_density: impl Fn(&StateVec) -> Result<f64>,
) -> Result<DistillOutcome> {
    if !(cfg.t_max <= 1.0 && cfg.t_min > 0.0 && cfg.t_min <= cfg.t_max) {
        return Err(Error::invalid("need 0 < t_min <= t_max <= 1"));
    }
    psi_init.check_dim(gen.n_params())?;
    let root = RandomStream::new(cfg.seed);
    let mut psi = psi_init.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut s = root.substream(step as u64);
        let view = s.index(gen.n_views());
        let eps = s.normal_vec(gen.dim());
        let t = cfg.time_at(step);
        let g = flowalign_param_grad(field, gen, &psi, psi_src, view, t, &cfg.settings, &eps)?;
        psi = psi.axpy(-cfg.lr.at(step, cfg.steps), &g.grad);
        if !psi.is_finite() {
            return Err(Error::NonFinite {
                step,
                t,
                context: "distillation update",
            });
        }
        trace.push(DistillTrace {
            step,
            t,
            view,
            target_log_density: log_density(&gen.render(&psi, view)?)?,
        });
    }
    Ok(DistillOutcome { psi, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::make_paired_mixture;

    fn two_view_gen() -> LinearGenerator {
        LinearGenerator::new(
            2,
            3,
            vec![
                View {
                    a: vec![1.0, 0.0, 0.5, 0.0, 1.0, -0.5],
                    b: StateVec::new(vec![0.1, 0.0]),
                },
                View {
                    a: vec![0.0, 2.0, 0.0, 1.0, 0.0, 1.0],
                    b: StateVec::zeros(2),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn render_and_pullback_are_adjoint() {
        let g = two_view_gen();
        let psi = StateVec::new(vec![0.3, -1.0, 2.0]);
        let y = StateVec::new(vec![0.7, 1.1]);
        for v in 0..2 {
            let r = &g.render(&psi, v).unwrap() - &g.views[v].b;
            let lhs = r.dot(&y);
            let rhs = psi.dot(&g.pullback(&y, v).unwrap());
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_generator_gradient_is_bracket() {
        let mix = make_paired_mixture(2, 2, 1, 1).unwrap();
        let gen = LinearGenerator::identity(2);
        let settings = GradSettings {
            c_src: Label::Class(0),
            c_tgt: Label::Class(1),
            omega: 4.0,
            gamma: 0.3,
        };
        let g = flowalign_param_grad(
            &mix,
            &gen,
            &StateVec::new(vec![0.2, 0.4]),
            &StateVec::new(vec![-0.1, 0.4]),
            0,
            0.5,
            &settings,
            &StateVec::new(vec![0.5, -0.5]),
        )
        .unwrap();
        assert_eq!(g.grad, g.bracket);
    }

    #[test]
    fn zero_lr_keeps_psi() {
        let mix = make_paired_mixture(2, 2, 1, 1).unwrap();
        let gen = two_view_gen();
        let psi = StateVec::new(vec![0.3, -0.2, 0.1]);
        let cfg = DistillConfig::new(
            GradSettings {
                c_src: Label::Class(0),
                c_tgt: Label::Class(1),
                omega: 7.5,
                gamma: 0.01,
            },
            20,
            LrSchedule::Constant(0.0),
            2,
        );
        let out = distill_optimize(&mix, &gen, &psi, &psi, &cfg, |x| {
            mix.log_density(Label::Class(1), x)
        })
        .unwrap();
        assert_eq!(out.psi, psi);
        assert_eq!(out.trace.len(), 20);
    }

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::Linear { start: 1.0, end: 0.1 };
        assert_eq!(s.at(0, 10), 1.0);
        assert!((s.at(9, 10) - 0.1).abs() < 1e-15);
        let cfg = DistillConfig::new(
            GradSettings {
                c_src: Label::Class(0),
                c_tgt: Label::Class(1),
                omega: 1.0,
                gamma: 0.0,
            },
            5,
            s,
            0,
        );
        assert_eq!(cfg.time_at(0), 0.98);
        assert!((cfg.time_at(4) - 0.02).abs() < 1e-15);
    }
}
