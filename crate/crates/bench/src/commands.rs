//! `train`, `generate` and `distill` subcommands.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use flowalign_core::distill::{
    distill_optimize, DistillConfig, GradSettings, LinearGenerator, LrSchedule, View,
};
use flowalign_core::field::Conditioned;
use flowalign_core::grid::make_time_grid;
use flowalign_core::mixture::{make_edit_tasks, ConditionalMixture};
use flowalign_core::net::{save_checkpoint, tweedie, train};
use flowalign_core::path::affine_path;
use flowalign_core::sampler::generate;
use flowalign_core::{Label, RandomStream, StateVec, VelocityField};

use crate::config::ExperimentConfig;
use crate::metrics::psnr;
use crate::run::{load_model, manifest_text, write_file};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldError {
    /// Mean per-coordinate squared velocity deviation.
    pub velocity_mse: f64,
    /// Same for the Tweedie estimate.
    pub tweedie_mse: f64,
}

/// Deviation of `field` from the analytic field of `mix` on `n` probes per
/// label, with `t` uniform in `[0.05, 0.95]` and `x_t` on the affine path.
pub fn field_error(
    mix: &ConditionalMixture,
    field: &dyn VelocityField,
    label: Label,
    n: usize,
    seed: u64,
) -> Result<FieldError> {
    let mut s = RandomStream::new(seed);
    let (mut v, mut w) = (0.0, 0.0);
    for _ in 0..n {
        let t = 0.05 + 0.9 * s.uniform();
        let x0 = mix.sample(label, &mut s)?;
        let eps = s.normal_vec(mix.dim());
        let x = affine_path(&x0, &eps, t)?;
        v += field.velocity(&x, t, label)?.mse(&mix.velocity(&x, t, label)?);
        w += tweedie(field, &x, t, label)?.mse(&tweedie(mix, &x, t, label)?);
    }
    Ok(FieldError {
        velocity_mse: v / n as f64,
        tweedie_mse: w / n as f64,
    })
}

/// Trains the configured network, saves the checkpoint and writes the loss
/// curve and the per-label deviation from the analytic field.
pub fn run_train(cfg: &ExperimentConfig) -> Result<()> {
    let mix = cfg.mixture()?;
    let outcome = train(&mix, cfg.architecture(), &cfg.train)?;
    let path = &cfg.model.checkpoint;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&outcome.net, path)?;
    let out = &cfg.run.out;
    let mut losses = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        let _ = writeln!(losses, "{i},{l}");
    }
    write_file(&out.join("losses.csv"), &losses)?;
    let mut errs = String::from("label,velocity_mse,tweedie_mse\n");
    for (k, label) in mix.labels().into_iter().enumerate() {
        let e = field_error(&mix, &outcome.net, label, 1000, cfg.train.seed.wrapping_add(k as u64 + 1))?;
        let _ = writeln!(errs, "{label},{},{}", e.velocity_mse, e.tweedie_mse);
    }
    write_file(&out.join("field_error.csv"), &errs)?;
    write_file(
        &out.join("manifest.txt"),
        &manifest_text(cfg, "train", &[("checkpoint", path.display().to_string())]),
    )?;
    Ok(())
}

/// Samples `generate_samples` points per class from the full grid.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<()> {
    let mix = cfg.mixture()?;
    let model = load_model(cfg, &mix)?;
    let grid = make_time_grid(cfg.edit.steps, cfg.edit.shift, 0)?;
    let seed = cfg.run.seeds.first().copied().unwrap_or(0);
    let root = RandomStream::new(seed);
    let mut csv = String::from("label,index,hit");
    for i in 0..mix.dim() {
        let _ = write!(csv, ",x_{i}");
    }
    csv.push('\n');
    for c in 0..mix.n_classes() {
        let source = Conditioned::new(model.field(), Label::Class(c));
        for i in 0..cfg.generate_samples {
            let mut s = root.substream((c * cfg.generate_samples + i) as u64);
            let x = generate(&source, &grid, &mut s)?;
            let hit = (mix.classify(&x)? == c) as u8;
            let _ = write!(csv, "{c},{i},{hit}");
            for v in x.iter() {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
    }
    write_file(&cfg.run.out.join("samples.csv"), &csv)?;
    write_file(&cfg.run.out.join("manifest.txt"), &manifest_text(cfg, "generate", &[]))?;
    Ok(())
}

/// View 0 is the identity; view `k > 0` is `I + 0.05 R_k` with the offset
/// chosen so every view renders `psi_src` to `psi_src`.
pub fn distill_generator(dim: usize, views: usize, psi_src: &StateVec, seed: u64) -> Result<LinearGenerator> {
    let mut s = RandomStream::new(seed);
    let views = (0..views)
        .map(|k| {
            let mut a = vec![0.0; dim * dim];
            for i in 0..dim {
                a[i * dim + i] = 1.0;
            }
            if k > 0 {
                for v in a.iter_mut() {
                    *v += 0.05 * s.normal();
                }
            }
            let b = StateVec::new(
                (0..dim)
                    .map(|i| psi_src[i] - (0..dim).map(|j| a[i * dim + j] * psi_src[j]).sum::<f64>())
                    .collect(),
            );
            View { a, b }
        })
        .collect();
    Ok(LinearGenerator::new(dim, dim, views)?)
}

/// Runs the parameter-space optimization for every task and seed.
pub fn run_distill(cfg: &ExperimentConfig) -> Result<()> {
    let mix = cfg.mixture()?;
    let model = load_model(cfg, &mix)?;
    let d = &cfg.distill;
    let tasks = make_edit_tasks(&mix, cfg.run.tasks, cfg.run.task_seed)?;
    let mut trace = String::from("task,seed,step,t,view,target_log_density\n");
    let mut results = String::from("task,seed,target_hit,target_log_density,preserve_mse,preserve_psnr");
    for i in 0..mix.dim() {
        let _ = write!(results, ",psi_{i}");
    }
    results.push('\n');
    let range = mix.coordinate_span();
    for task in &tasks {
        for &seed in &cfg.run.seeds {
            let gen = distill_generator(mix.dim(), d.views, &task.x_src, seed)?;
            let mut dc = DistillConfig::new(
                GradSettings {
                    c_src: task.c_src,
                    c_tgt: task.c_tgt,
                    omega: cfg.edit.omega,
                    gamma: d.gamma,
                },
                d.steps,
                LrSchedule::Linear {
                    start: d.lr_start,
                    end: d.lr_end,
                },
                RandomStream::new(seed).substream(task.id as u64).seed(),
            );
            dc.t_max = d.t_max;
            dc.t_min = d.t_min;
            let out = distill_optimize(model.field(), &gen, &task.x_src, &task.x_src, &dc, |x| {
                mix.log_density(task.c_tgt, x)
            })?;
            for r in &out.trace {
                let _ = writeln!(
                    trace,
                    "{},{},{},{},{},{}",
                    task.id, seed, r.step, r.t, r.view, r.target_log_density
                );
            }
            let x = gen.render(&out.psi, 0)?;
            let Label::Class(c_tgt) = task.c_tgt else {
                bail!("distill targets must be classes");
            };
            let mse = x.masked_mse(&task.x_src, mix.preserve_mask());
            let _ = write!(
                results,
                "{},{},{},{},{},{}",
                task.id,
                seed,
                (mix.classify(&x)? == c_tgt) as u8,
                mix.log_density(task.c_tgt, &x)?,
                mse,
                psnr(mse, range)
            );
            for v in out.psi.iter() {
                let _ = write!(results, ",{v}");
            }
            results.push('\n');
        }
    }
    write_file(&cfg.run.out.join("distill_trace.csv"), &trace)?;
    write_file(&cfg.run.out.join("distill_results.csv"), &results)?;
    write_file(&cfg.run.out.join("manifest.txt"), &manifest_text(cfg, "distill", &[]))?;
    Ok(())
}
