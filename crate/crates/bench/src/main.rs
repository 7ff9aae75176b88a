use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flowalign_bench::commands::{run_distill, run_generate, run_train};
use flowalign_bench::config::{ExperimentConfig, Method};
use flowalign_bench::oc_battery::{run_battery, BatterySpec};
use flowalign_bench::run::{manifest_text, run, run_reverse, write_file};
use flowalign_bench::sweep::{export_plot, run_sweep};

/// Inversion-free flow editing experiments on synthetic mixtures.
#[derive(Parser)]
#[command(name = "flowalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (`key = value` with `[section]` headers). A manifest.txt
    /// written by any command is itself a valid config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// flowalign, flowedit, ddib or sdedit.
    #[arg(long)]
    method: Option<String>,
    /// Guidance scale.
    #[arg(long)]
    omega: Option<f64>,
    /// Source-consistency weight.
    #[arg(long)]
    zeta: Option<f64>,
    /// Grid steps (training steps for `train`).
    #[arg(long)]
    steps: Option<usize>,
    /// Leading grid steps skipped by the edit.
    #[arg(long)]
    skip: Option<usize>,
    /// Any other key, as `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the velocity network and save a checkpoint.
    Train(Common),
    /// Sample every class from the configured field.
    Generate(Common),
    /// Edit every task under every seed and write metrics.
    Edit(Common),
    /// Edit, then edit back with the labels swapped.
    ReverseEdit(Common),
    /// Aggregate metrics over the configured sweep axis.
    Sweep(Common),
    /// Compare closed-form controls with the numerical solver
    /// (`--seed` picks the battery seed).
    VerifyOc(Common),
    /// Optimize generator parameters with the editing drift.
    Distill(Common),
    /// Plot two columns of a CSV file as an SVG line plot.
    ExportPlot {
        /// Input CSV (for example sweep.csv).
        #[arg(long)]
        input: PathBuf,
        /// Output SVG.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "preserve_psnr_mean")]
        x: String,
        #[arg(long, default_value = "hit_rate")]
        y: String,
        /// Column used to label points.
        #[arg(long, default_value = "value")]
        label: String,
    },
}

fn build_config(c: &Common, is_train: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &c.sets {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set expects section.key=value, got {s:?}"))?;
        let (section, key) = k
            .split_once('.')
            .with_context(|| format!("--set expects section.key=value, got {s:?}"))?;
        cfg.set(section.trim(), key.trim(), v.trim())?;
    }
    if let Some(seed) = c.seed {
        cfg.run.seeds = vec![seed];
        if is_train {
            cfg.train.seed = seed;
        }
    }
    if let Some(out) = &c.out {
        cfg.run.out = out.clone();
    }
    if let Some(m) = &c.method {
        cfg.edit.method = Method::parse(m)?;
    }
    if let Some(w) = c.omega {
        cfg.edit.omega = w;
    }
    if let Some(z) = c.zeta {
        cfg.edit.zeta = z;
    }
    if let Some(n) = c.steps {
        if is_train {
            cfg.train.steps = n;
        } else {
            cfg.edit.steps = n;
        }
    }
    if let Some(k) = c.skip {
        cfg.edit.skip = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => run_train(&build_config(&c, true)?),
        Command::Generate(c) => run_generate(&build_config(&c, false)?),
        Command::Edit(c) => run(&build_config(&c, false)?).map(|_| ()),
        Command::ReverseEdit(c) => run_reverse(&build_config(&c, false)?).map(|_| ()),
        Command::Sweep(c) => run_sweep(&build_config(&c, false)?).map(|_| ()),
        Command::Distill(c) => run_distill(&build_config(&c, false)?),
        Command::VerifyOc(c) => {
            let mut cfg = build_config(&c, false)?;
            if let Some(seed) = c.seed {
                cfg.oc.seed = seed;
            }
            let spec = BatterySpec {
                problems: cfg.oc.problems,
                seed: cfg.oc.seed,
                ..BatterySpec::default()
            };
            let rep = run_battery(&spec)?;
            for s in rep.summary() {
                println!(
                    "{} {}: worst={:e} tol={:e} failures={}/{}",
                    if s.pass() { "PASS" } else { "FAIL" },
                    s.check,
                    s.worst,
                    s.tol,
                    s.failures,
                    s.total
                );
            }
            println!("elapsed {:.3}s", rep.elapsed.as_secs_f64());
            write_file(&cfg.run.out.join("oc_report.csv"), &rep.to_csv())?;
            write_file(&cfg.run.out.join("manifest.txt"), &manifest_text(&cfg, "verify-oc", &[]))?;
            if !rep.all_pass() {
                bail!("control battery has failing checks (see oc_report.csv)");
            }
            Ok(())
        }
        Command::ExportPlot {
            input,
            output,
            x,
            y,
            label,
        } => write_file(&output, &export_plot(&input, &x, &y, Some(&label))?),
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<flowalign_core::Error>())
        .map_or("runtime", |c| c.kind())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('"', "'").replace('\n', " ");
            eprintln!("error: kind={} msg=\"{msg}\"", error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
