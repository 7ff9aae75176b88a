//! Executes configured experiments and writes their artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use flowalign_core::edit::{run_edit, TrajectoryLog};
use flowalign_core::field::CountingField;
use flowalign_core::grid::make_time_grid;
use flowalign_core::mixture::{make_edit_tasks, ConditionalMixture, EditTask};
use flowalign_core::net::{load_checkpoint, save_checkpoint, train, VelocityNet};
use flowalign_core::oc::prop1_residual;
use flowalign_core::sampler::{ddib_edit, sdedit_edit};
use flowalign_core::{Label, RandomStream, StateVec, VelocityField};

use crate::config::{ExperimentConfig, FieldKind, Method};
use crate::metrics::{metrics_csv, score_edit, MetricRow};

/// The velocity field an experiment runs on.
pub enum Model {
    Analytic(ConditionalMixture),
    Learned(VelocityNet),
}

impl Model {
    pub fn field(&self) -> &dyn VelocityField {
        match self {
            Model::Analytic(m) => m,
            Model::Learned(n) => n,
        }
    }
}

/// Loads the configured field, training and saving a network when the
/// checkpoint is missing and `train_if_missing` is set.
pub fn load_model(cfg: &ExperimentConfig, mix: &ConditionalMixture) -> Result<Model> {
    match cfg.model.field {
        FieldKind::Analytic => Ok(Model::Analytic(mix.clone())),
        FieldKind::Learned => {
            let path = &cfg.model.checkpoint;
            if path.exists() {
                let net = load_checkpoint(path)
                    .with_context(|| format!("loading checkpoint {}", path.display()))?;
                if *net.arch() != cfg.architecture() {
                    bail!("checkpoint {} does not match the configured architecture", path.display());
                }
                Ok(Model::Learned(net))
            } else if cfg.model.train_if_missing {
                let out = train(mix, cfg.architecture(), &cfg.train)?;
                if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                save_checkpoint(&out.net, path)?;
                Ok(Model::Learned(out.net))
            } else {
                bail!("missing checkpoint {} (run `train` first or set train_if_missing)", path.display())
            }
        }
    }
}

/// Seed of the edit of `task` under run seed `seed`.
pub fn edit_seed(seed: u64, task: usize) -> u64 {
    RandomStream::new(seed).substream(task as u64).seed()
}

pub fn nfe_per_step(method: Method) -> &'static str {
    match method {
        Method::FlowAlign => "3",
        Method::FlowEdit => "4",
        Method::Ddib => "1 inversion + 2 sampling",
        Method::SdEdit => "2",
    }
}

/// Applies `method` from `x_src` with the given roles. Returns the edit and
/// the log for the two-trajectory methods.
pub fn apply_method(
    cfg: &ExperimentConfig,
    method: Method,
    field: &dyn VelocityField,
    x_src: &StateVec,
    c_src: Label,
    c_tgt: Label,
    seed: u64,
) -> Result<(StateVec, Option<TrajectoryLog>)> {
    let e = &cfg.edit;
    match method {
        Method::FlowAlign | Method::FlowEdit => {
            let mut c = cfg.clone();
            c.edit.method = method;
            let (x, log) = run_edit(field, x_src, c_src, c_tgt, &c.edit_params(seed)?)?;
            Ok((x, Some(log)))
        }
        Method::Ddib => {
            let grid = make_time_grid(e.ddib_steps, e.shift, 0)?;
            Ok((ddib_edit(field, x_src, c_src, c_tgt, &grid, e.omega)?, None))
        }
        Method::SdEdit => {
            let grid = make_time_grid(e.steps, e.shift, 0)?;
            let t_start = grid.times()[e.sdedit_index];
            let mut s = RandomStream::new(seed);
            Ok((sdedit_edit(field, x_src, c_tgt, &grid, t_start, e.omega, &mut s)?, None))
        }
    }
}

pub struct EditOutcome {
    pub task: EditTask,
    pub seed: u64,
    pub edited: StateVec,
    pub reconstructed: StateVec,
    pub log: Option<TrajectoryLog>,
    pub row: MetricRow,
}

/// Forward edit, backward reconstruction and metrics for one task and seed.
pub fn edit_one(
    cfg: &ExperimentConfig,
    mix: &ConditionalMixture,
    model: &Model,
    task: &EditTask,
    seed: u64,
) -> Result<EditOutcome> {
    let method = cfg.edit.method;
    let counter = CountingField::new(model.field());
    let s = edit_seed(seed, task.id);
    let (edited, log) = apply_method(cfg, method, &counter, &task.x_src, task.c_src, task.c_tgt, s)?;
    let nfe = counter.calls();
    let (reconstructed, _) =
        apply_method(cfg, method, model.field(), &edited, task.c_tgt, task.c_src, s)?;
    let score = score_edit(mix, &task.x_src, &edited, task.c_tgt)?;
    let zeta = match method {
        Method::FlowAlign => cfg.edit.zeta,
        _ => 0.0,
    };
    let row = MetricRow {
        task: task.id,
        seed,
        method: method.name().to_string(),
        omega: cfg.edit.omega,
        zeta,
        preserve_mse: score.preserve_mse,
        preserve_psnr: score.preserve_psnr,
        edit_dist: score.edit_dist,
        target_hit: score.target_hit,
        target_log_density: score.target_log_density,
        roundtrip_mse: reconstructed.mse(&task.x_src),
        nfe,
        c_src: task.c_src,
        c_tgt: task.c_tgt,
    };
    Ok(EditOutcome {
        task: task.clone(),
        seed,
        edited,
        reconstructed,
        log,
        row,
    })
}

/// Runs every task under every seed, in task-major order.
pub fn run_edits(cfg: &ExperimentConfig, mix: &ConditionalMixture, model: &Model) -> Result<Vec<EditOutcome>> {
    let tasks = make_edit_tasks(mix, cfg.run.tasks, cfg.run.task_seed)?;
    let mut out = Vec::with_capacity(tasks.len() * cfg.run.seeds.len());
    for task in &tasks {
        for &seed in &cfg.run.seeds {
            out.push(edit_one(cfg, mix, model, task, seed)?);
        }
    }
    Ok(out)
}

pub fn manifest_text(cfg: &ExperimentConfig, command: &str, extra: &[(&str, String)]) -> String {
    let mut s = cfg.to_text();
    let _ = write!(
        s,
        "\n[manifest]\ncommand = {command}\nconfig_hash = {}\nversion = {}\nseeds = {}\n",
        cfg.hash(),
        env!("CARGO_PKG_VERSION"),
        cfg.run.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    );
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn vector_columns(prefix: &str, dim: usize) -> String {
    (0..dim).map(|i| format!(",{prefix}_{i}")).collect()
}

fn vector_values(x: &StateVec) -> String {
    x.iter().map(|v| format!(",{v}")).collect()
}

/// `edit`: metrics, edited states, manifest and optional trajectories.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let mix = cfg.mixture()?;
    let model = load_model(cfg, &mix)?;
    let outcomes = run_edits(cfg, &mix, &model)?;
    let out = &cfg.run.out;
    let range = mix.coordinate_span();
    let rows: Vec<MetricRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    write_file(&out.join("metrics.csv"), &metrics_csv(&rows, range))?;

    let mut edits = format!("task,seed{}\n", vector_columns("x", mix.dim()));
    for o in &outcomes {
        let _ = writeln!(edits, "{},{}{}", o.task.id, o.seed, vector_values(&o.edited));
    }
    write_file(&out.join("edits.csv"), &edits)?;

    if cfg.run.trajectories {
        let mut resid = String::from("task,seed,step,t,residual\n");
        for o in &outcomes {
            if let Some(log) = &o.log {
                let name = format!("task{:03}_seed{}.csv", o.task.id, o.seed);
                write_file(&out.join("trajectories").join(name), &log.to_csv())?;
                if cfg.edit.method == Method::FlowAlign {
                    for (r, v) in log.steps.iter().zip(prop1_residual(log)) {
                        let _ = writeln!(resid, "{},{},{},{},{}", o.task.id, o.seed, r.step, r.t, v);
                    }
                }
            }
        }
        if cfg.edit.method == Method::FlowAlign {
            write_file(&out.join("prop1_residual.csv"), &resid)?;
        }
    }
    write_file(
        &out.join("manifest.txt"),
        &manifest_text(
            cfg,
            "edit",
            &[
                ("nfe_per_step", nfe_per_step(cfg.edit.method).to_string()),
                ("psnr_range", range.to_string()),
            ],
        ),
    )?;
    Ok(rows)
}

/// `reverse-edit`: reconstructions of the configured edits.
pub fn run_reverse(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mix = cfg.mixture()?;
    let model = load_model(cfg, &mix)?;
    let outcomes = run_edits(cfg, &mix, &model)?;
    let mut csv = format!("task,seed,method,roundtrip_mse{}\n", vector_columns("x", mix.dim()));
    for o in &outcomes {
        let _ = writeln!(
            csv,
            "{},{},{},{}{}",
            o.task.id,
            o.seed,
            cfg.edit.method.name(),
            o.row.roundtrip_mse,
            vector_values(&o.reconstructed)
        );
    }
    let path = cfg.run.out.join("reconstructions.csv");
    write_file(&path, &csv)?;
    write_file(
        &cfg.run.out.join("manifest.txt"),
        &manifest_text(cfg, "reverse-edit", &[("nfe_per_step", nfe_per_step(cfg.edit.method).to_string())]),
    )?;
    Ok(path)
}
