use flowalign_core::edit::{
    backward_edit, flowalign_edit, flowalign_step, flowedit_edit, gamma_eval, plain_step,
    run_edit, CfgBase, EditMethod, EditParams, StepInput,
};
use flowalign_core::grid::make_time_grid;
use flowalign_core::mixture::{make_edit_tasks, make_paired_mixture, Component, ConditionalMixture};
use flowalign_core::{Label, StateVec};
use proptest::prelude::*;

fn default_grid() -> flowalign_core::TimeGrid {
    make_time_grid(50, 3.0, 17).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn flowalign_without_regularizer_is_the_plain_step(
        x in prop::collection::vec(-3.0f64..3.0, 4),
        src in prop::collection::vec(-3.0f64..3.0, 4),
        eps in prop::collection::vec(-3.0f64..3.0, 4),
        t in 0.01f64..1.0,
        frac in 0.01f64..1.0,
        mseed in 0u64..50,
        base_src in any::<bool>(),
    ) {
        let mix = make_paired_mixture(2, 4, 2, mseed).unwrap();
        let (x, src, eps) = (StateVec::new(x), StateVec::new(src), StateVec::new(eps));
        let input = StepInput {
            x: &x, x_src: &src, t, dt: -t * frac,
            c_src: Label::Class(0), c_tgt: Label::Class(1), eps: &eps,
        };
        let base = if base_src { CfgBase::Source } else { CfgBase::Null };
        let (a, ra) = flowalign_step(&mix, &input, 1.0, 0.0, base).unwrap();
        let (b, rb) = plain_step(&mix, &input).unwrap();
        prop_assert_eq!(a.as_slice(), b.as_slice());
        prop_assert_eq!(ra, rb);
    }
}

#[test]
fn key_equality_holds_on_every_logged_step() {
    let mix = make_paired_mixture(2, 8, 2, 0).unwrap();
    let tasks = make_edit_tasks(&mix, 6, 3).unwrap();
    for (i, task) in tasks.iter().enumerate() {
        for params in [
            EditParams::flowalign(default_grid(), i as u64),
            EditParams::flowedit(default_grid(), i as u64),
            EditParams::plain(default_grid(), i as u64),
        ] {
            let (_, log) = run_edit(&mix, &task.x_src, task.c_src, task.c_tgt, &params).unwrap();
            assert_eq!(log.steps.len(), 33);
            assert!(log.key_equality_residual() <= 1e-9);
        }
    }
}

#[test]
fn flowedit_with_unit_scales_matches_unregularized_flowalign() {
    let mix = make_paired_mixture(2, 8, 2, 1).unwrap();
    let task = &make_edit_tasks(&mix, 1, 0).unwrap()[0];
    let (a, _) = flowedit_edit(&mix, &task.x_src, task.c_src, task.c_tgt, &default_grid(), 1.0, 1.0, 5).unwrap();
    let params = EditParams {
        omega: 1.0,
        zeta: 0.0,
        ..EditParams::flowalign(default_grid(), 5)
    };
    let (b, _) = flowalign_edit(&mix, &task.x_src, task.c_src, task.c_tgt, &params).unwrap();
    assert_eq!(a, b);
}

fn point_masses(sigma: f64) -> ConditionalMixture {
    let c0 = vec![Component { weight: 1.0, mean: StateVec::new(vec![0.8, -0.3, 0.5]) }];
    let c1 = vec![Component { weight: 1.0, mean: StateVec::new(vec![-0.6, 0.4, 0.5]) }];
    ConditionalMixture::new(sigma, vec![c0, c1], vec![false, false, true]).unwrap()
}

#[test]
fn flowedit_on_point_masses_lands_on_the_target() {
    let mix = point_masses(1e-9);
    let x_src = StateVec::new(vec![0.8, -0.3, 0.5]);
    let x_tgt = StateVec::new(vec![-0.6, 0.4, 0.5]);
    for (n, shift) in [(5, 1.0), (33, 3.0), (64, 2.0)] {
        let g = make_time_grid(n, shift, 0).unwrap();
        let (out, _) = flowedit_edit(&mix, &x_src, Label::Class(0), Label::Class(1), &g, 1.0, 1.0, 0).unwrap();
        assert!((&out - &x_tgt).max_abs() < 1e-9, "{out:?}");
    }
}

#[test]
fn regularizer_never_increases_identity_drift() {
    let mix = make_paired_mixture(2, 8, 2, 0).unwrap();
    let tasks = make_edit_tasks(&mix, 10, 7).unwrap();
    let (mut reg, mut plain) = (0.0, 0.0);
    for seed in 0..50u64 {
        let task = &tasks[seed as usize % tasks.len()];
        let params = EditParams { omega: 1.0, ..EditParams::flowalign(default_grid(), seed) };
        let (a, _) = flowalign_edit(&mix, &task.x_src, task.c_src, task.c_src, &params).unwrap();
        let (b, _) = run_edit(&mix, &task.x_src, task.c_src, task.c_src, &EditParams::plain(default_grid(), seed)).unwrap();
        reg += (&a - &task.x_src).norm();
        plain += (&b - &task.x_src).norm();
    }
    assert!(reg <= plain, "regularized {reg} plain {plain}");
}

#[test]
fn identity_edit_then_backward_stays_near_source() {
    let mix = make_paired_mixture(2, 8, 2, 0).unwrap();
    let tasks = make_edit_tasks(&mix, 10, 9).unwrap();
    let (mut fwd, mut round) = (0.0, 0.0);
    for (i, task) in tasks.iter().enumerate() {
        let params = EditParams { omega: 1.0, ..EditParams::flowalign(default_grid(), i as u64) };
        let (edited, _) = flowalign_edit(&mix, &task.x_src, task.c_src, task.c_src, &params).unwrap();
        let back = backward_edit(&mix, &edited, task.c_src, task.c_src, &params).unwrap();
        fwd += edited.mse(&task.x_src);
        round += back.mse(&task.x_src);
    }
    assert!(round <= fwd, "round {round} forward {fwd}");
}

#[test]
fn edits_are_deterministic_given_seed() {
    let mix = make_paired_mixture(2, 8, 2, 0).unwrap();
    let task = &make_edit_tasks(&mix, 1, 0).unwrap()[0];
    let params = EditParams::flowalign(default_grid(), 11);
    let (a, la) = flowalign_edit(&mix, &task.x_src, task.c_src, task.c_tgt, &params).unwrap();
    let (b, lb) = flowalign_edit(&mix, &task.x_src, task.c_src, task.c_tgt, &params).unwrap();
    assert_eq!(a, b);
    assert_eq!(la.to_csv(), lb.to_csv());
    let r1 = backward_edit(&mix, &a, task.c_src, task.c_tgt, &params).unwrap();
    let r2 = backward_edit(&mix, &b, task.c_src, task.c_tgt, &params).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn gamma_is_positive_exactly_when_eta_t_exceeds_one() {
    for i in 1..60 {
        let eta = 0.1 * i as f64 + 0.013;
        for j in 0..=40 {
            let t = j as f64 / 40.0;
            match gamma_eval(eta, t) {
                Ok(g) => assert_eq!(g > 0.0, eta * t > 1.0, "eta {eta} t {t}"),
                Err(_) => assert!((1.0 - eta * t).abs() < 1e-9),
            }
        }
    }
}

#[test]
fn eta_schedule_runs() {
    let mix = make_paired_mixture(2, 8, 2, 0).unwrap();
    let task = &make_edit_tasks(&mix, 1, 0).unwrap()[0];
    let params = EditParams {
        zeta_from_eta: Some(20.0),
        method: EditMethod::FlowAlign,
        ..EditParams::flowalign(default_grid(), 0)
    };
    let (out, _) = run_edit(&mix, &task.x_src, task.c_src, task.c_tgt, &params).unwrap();
    assert!(out.is_finite());
}
