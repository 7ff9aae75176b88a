//! Random control-problem battery comparing the closed forms with the
//! numerical solver.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use anyhow::Result;
use flowalign_core::grid::make_time_grid;
use flowalign_core::oc::{
    costate, costate_spread, discrete_oc_solve, lemma1_control, minimizer_control, ControlSeq,
    OCProblem,
};
use flowalign_core::RandomStream;

pub const BATTERY_ETAS: [f64; 3] = [0.5, 2.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatterySpec {
    pub problems: usize,
    pub dim: usize,
    pub steps: usize,
    pub seed: u64,
    pub solver_iters: usize,
    pub probes: usize,
}

impl Default for BatterySpec {
    fn default() -> Self {
        BatterySpec {
            problems: 20,
            dim: 2,
            steps: 64,
            seed: 0,
            solver_iters: 100_000,
            probes: 100,
        }
    }
}

/// Problem `i` uses `eta = BATTERY_ETAS[i % 3]` and draws drift, start and
/// source from substream `i`.
pub fn battery_problem(spec: &BatterySpec, i: usize) -> Result<OCProblem> {
    let grid = make_time_grid(spec.steps, 1.0, 0)?;
    let mut s = RandomStream::new(spec.seed).substream(i as u64);
    let a = (0..spec.steps).map(|_| s.normal_vec(spec.dim)).collect();
    let x_start = s.normal_vec(spec.dim);
    let x_src = s.normal_vec(spec.dim);
    Ok(OCProblem::new(grid, a, x_start, x_src, BATTERY_ETAS[i % BATTERY_ETAS.len()])?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub problem: usize,
    pub eta: f64,
    pub value: f64,
    pub tol: f64,
}

impl CheckRow {
    pub fn pass(&self) -> bool {
        self.value <= self.tol
    }
}

#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub rows: Vec<CheckRow>,
    pub elapsed: Duration,
}

/// Check names in report order.
pub const CHECKS: [&str; 7] = [
    "lemma_vs_solver_control",
    "lemma_vs_solver_objective",
    "solver_costate_constancy",
    "lemma_boundary_condition",
    "minimizer_vs_solver_control",
    "lemma_probe_violations",
    "solver_monotone_descent",
];

fn perturbed(u: &ControlSeq, s: &mut RandomStream, scale: f64) -> ControlSeq {
    ControlSeq {
        u: u.u.iter().map(|x| x.axpy(scale, &s.normal_vec(x.dim()))).collect(),
    }
}

pub fn run_battery(spec: &BatterySpec) -> Result<BatteryReport> {
    let start = Instant::now();
    let mut rows = Vec::new();
    for i in 0..spec.problems {
        let prob = battery_problem(spec, i)?;
        let eta = prob.eta;
        let sol = discrete_oc_solve(&prob, spec.solver_iters, None)?;
        let lemma = lemma1_control(&prob);
        let minimizer = minimizer_control(&prob);
        let j_solver = prob.objective(&sol.control);
        let j_lemma = prob.objective(&lemma);

        let p_lemma = &prob.a[0] - &lemma.u[0];
        let terminal = &prob.rollout(&lemma) - &prob.x_src;
        let boundary = (&p_lemma - &terminal.scale(eta)).max_abs();

        let mut probe = RandomStream::new(spec.seed).substream(1_000_000 + i as u64);
        let violations = (0..spec.probes)
            .filter(|_| prob.objective(&perturbed(&lemma, &mut probe, 0.05)) < j_lemma)
            .count();

        let rise = sol
            .objective_trace
            .windows(2)
            .map(|w| w[1] - w[0] - 1e-12 * w[0].abs())
            .fold(0.0, f64::max);

        let values = [
            (lemma.max_diff(&sol.control), 1e-4),
            ((j_lemma - j_solver).abs(), 1e-8),
            (costate_spread(&costate(&prob, &sol.control)), 1e-6),
            (boundary, 1e-8),
            (minimizer.max_diff(&sol.control), 1e-4),
            (violations as f64, 0.0),
            (rise, 0.0),
        ];
        for (check, (value, tol)) in CHECKS.iter().zip(values) {
            rows.push(CheckRow {
                check,
                problem: i,
                eta,
                value,
                tol,
            });
        }
    }
    Ok(BatteryReport {
        rows,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub check: &'static str,
    pub worst: f64,
    pub tol: f64,
    pub failures: usize,
    pub total: usize,
}

impl CheckSummary {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }
}

impl BatteryReport {
    pub fn summary(&self) -> Vec<CheckSummary> {
        CHECKS
            .iter()
            .map(|&check| {
                let rows: Vec<&CheckRow> = self.rows.iter().filter(|r| r.check == check).collect();
                CheckSummary {
                    check,
                    worst: rows.iter().map(|r| r.value).fold(0.0, f64::max),
                    tol: rows.first().map_or(0.0, |r| r.tol),
                    failures: rows.iter().filter(|r| !r.pass()).count(),
                    total: rows.len(),
                }
            })
            .collect()
    }

    pub fn get(&self, check: &str) -> Option<CheckSummary> {
        self.summary().into_iter().find(|s| s.check == check)
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(CheckRow::pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,problem,eta,value,tol,status\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{}",
                r.check,
                r.problem,
                r.eta,
                r.value,
                r.tol,
                if r.pass() { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}
