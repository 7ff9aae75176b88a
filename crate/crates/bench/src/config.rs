//! Experiment configuration: flat `key = value` text with `[section]` headers.
//!
//! ```text
//! # comment
//! [dataset]
//! classes = 2
//! ```
//!
//! Every key has a default; unknown sections or keys are rejected with the
//! offending name in the message. [`ExperimentConfig::to_text`] writes every
//! key, and its output parses back to an identical config.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

use flowalign_core::edit::{CfgBase, EditMethod, EditParams};
use flowalign_core::grid::make_time_grid;
use flowalign_core::mixture::{ConditionalMixture, PairedMixtureSpec};
use flowalign_core::net::{Architecture, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FlowAlign,
    FlowEdit,
    Ddib,
    SdEdit,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FlowAlign, Method::FlowEdit, Method::Ddib, Method::SdEdit];

    pub fn name(&self) -> &'static str {
        match self {
            Method::FlowAlign => "flowalign",
            Method::FlowEdit => "flowedit",
            Method::Ddib => "ddib",
            Method::SdEdit => "sdedit",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| anyhow!("unknown method {s:?} (expected flowalign, flowedit, ddib or sdedit)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Analytic,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Omega,
    Zeta,
    Method,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Omega => "omega",
            SweepAxis::Zeta => "zeta",
            SweepAxis::Method => "method",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSection {
    pub classes: usize,
    pub dim: usize,
    pub edit_dims: usize,
    pub components: usize,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub field: FieldKind,
    pub checkpoint: PathBuf,
    pub train_if_missing: bool,
    pub hidden: usize,
    pub layers: usize,
    pub freqs: usize,
    pub embed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditSection {
    pub method: Method,
    pub omega: f64,
    pub zeta: f64,
    /// Per-step consistency weight from this terminal weight when set.
    pub eta: Option<f64>,
    pub cfg_base: CfgBase,
    pub steps: usize,
    pub shift: f64,
    pub skip: usize,
    pub omega_src: f64,
    pub omega_tgt: f64,
    pub ddib_steps: usize,
    /// SDEdit starts at `times[sdedit_index]` of the editing grid.
    pub sdedit_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub tasks: usize,
    pub task_seed: u64,
    pub seeds: Vec<u64>,
    pub trajectories: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillSection {
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub gamma: f64,
    pub t_max: f64,
    pub t_min: f64,
    pub views: usize,
}

/// Random control-problem battery of `verify-oc`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcSection {
    pub problems: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub edit: EditSection,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub distill: DistillSection,
    pub oc: OcSection,
    pub generate_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSection {
                classes: 2,
                dim: 8,
                edit_dims: 2,
                components: 2,
                sigma: 0.15,
                seed: 0,
            },
            model: ModelSection {
                field: FieldKind::Analytic,
                checkpoint: PathBuf::from("model.falb"),
                train_if_missing: false,
                hidden: 128,
                layers: 3,
                freqs: 8,
                embed: 16,
            },
            train: TrainConfig::default(),
            edit: EditSection {
                method: Method::FlowAlign,
                omega: EditParams::DEFAULT_OMEGA,
                zeta: EditParams::DEFAULT_ZETA,
                eta: None,
                cfg_base: CfgBase::Null,
                steps: 50,
                shift: 3.0,
                skip: 17,
                omega_src: 3.0,
                omega_tgt: 13.5,
                ddib_steps: 17,
                sdedit_index: 17,
            },
            run: RunSection {
                tasks: 20,
                task_seed: 0,
                seeds: vec![0, 1, 2, 3, 4],
                trajectories: false,
                out: PathBuf::from("out"),
            },
            sweep: SweepSection {
                axis: SweepAxis::Zeta,
                values: ["0", "0.003", "0.01", "0.03", "0.1"].map(String::from).to_vec(),
            },
            distill: DistillSection {
                steps: 300,
                lr_start: 0.45,
                lr_end: 0.01,
                gamma: 0.39,
                t_max: 0.98,
                t_min: 0.02,
                views: 2,
            },
            oc: OcSection { problems: 20, seed: 0 },
            generate_samples: 200,
        }
    }
}

/// Keys of the informational `[manifest]` section written next to results.
const MANIFEST_KEYS: [&str; 7] = [
    "command",
    "checkpoint",
    "config_hash",
    "version",
    "seeds",
    "nfe_per_step",
    "psnr_range",
];

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("expected true or false, got {v:?}"),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("bad value {v:?}: {e}"))
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(&section, key, value)
                .with_context(|| format!("line {}: [{section}] {key}", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        match (section, key) {
            ("dataset", "classes") => self.dataset.classes = parse_num(v)?,
            ("dataset", "dim") => self.dataset.dim = parse_num(v)?,
            ("dataset", "edit_dims") => self.dataset.edit_dims = parse_num(v)?,
            ("dataset", "components") => self.dataset.components = parse_num(v)?,
            ("dataset", "sigma") => self.dataset.sigma = parse_num(v)?,
            ("dataset", "seed") => self.dataset.seed = parse_num(v)?,
            ("model", "field") => {
                self.model.field = match v {
                    "analytic" => FieldKind::Analytic,
                    "learned" => FieldKind::Learned,
                    _ => bail!("expected analytic or learned, got {v:?}"),
                }
            }
            ("model", "checkpoint") => self.model.checkpoint = PathBuf::from(v),
            ("model", "train_if_missing") => self.model.train_if_missing = parse_bool(v)?,
            ("model", "hidden") => self.model.hidden = parse_num(v)?,
            ("model", "layers") => self.model.layers = parse_num(v)?,
            ("model", "freqs") => self.model.freqs = parse_num(v)?,
            ("model", "embed") => self.model.embed = parse_num(v)?,
            ("train", "steps") => self.train.steps = parse_num(v)?,
            ("train", "batch") => self.train.batch = parse_num(v)?,
            ("train", "lr") => self.train.lr = parse_num(v)?,
            ("train", "beta1") => self.train.beta1 = parse_num(v)?,
            ("train", "beta2") => self.train.beta2 = parse_num(v)?,
            ("train", "p_drop") => self.train.p_drop = parse_num(v)?,
            ("train", "seed") => self.train.seed = parse_num(v)?,
            ("edit", "method") => self.edit.method = Method::parse(v)?,
            ("edit", "omega") => self.edit.omega = parse_num(v)?,
            ("edit", "zeta") => self.edit.zeta = parse_num(v)?,
            ("edit", "eta") => {
                self.edit.eta = if v == "none" { None } else { Some(parse_num(v)?) }
            }
            ("edit", "cfg_base") => {
                self.edit.cfg_base = match v {
                    "null" => CfgBase::Null,
                    "source" => CfgBase::Source,
                    _ => bail!("expected null or source, got {v:?}"),
                }
            }
            ("edit", "steps") => self.edit.steps = parse_num(v)?,
            ("edit", "shift") => self.edit.shift = parse_num(v)?,
            ("edit", "skip") => self.edit.skip = parse_num(v)?,
            ("edit", "omega_src") => self.edit.omega_src = parse_num(v)?,
            ("edit", "omega_tgt") => self.edit.omega_tgt = parse_num(v)?,
            ("edit", "ddib_steps") => self.edit.ddib_steps = parse_num(v)?,
            ("edit", "sdedit_index") => self.edit.sdedit_index = parse_num(v)?,
            ("run", "tasks") => self.run.tasks = parse_num(v)?,
            ("run", "task_seed") => self.run.task_seed = parse_num(v)?,
            ("run", "seeds") => {
                self.run.seeds = parse_list(v).iter().map(|s| parse_num(s)).collect::<Result<_>>()?
            }
            ("run", "trajectories") => self.run.trajectories = parse_bool(v)?,
            ("run", "out") => self.run.out = PathBuf::from(v),
            ("sweep", "axis") => {
                self.sweep.axis = match v {
                    "omega" => SweepAxis::Omega,
                    "zeta" => SweepAxis::Zeta,
                    "method" => SweepAxis::Method,
                    _ => bail!("expected omega, zeta or method, got {v:?}"),
                }
            }
            ("sweep", "values") => self.sweep.values = parse_list(v),
            ("distill", "steps") => self.distill.steps = parse_num(v)?,
            ("distill", "lr_start") => self.distill.lr_start = parse_num(v)?,
            ("distill", "lr_end") => self.distill.lr_end = parse_num(v)?,
            ("distill", "gamma") => self.distill.gamma = parse_num(v)?,
            ("distill", "t_max") => self.distill.t_max = parse_num(v)?,
            ("distill", "t_min") => self.distill.t_min = parse_num(v)?,
            ("distill", "views") => self.distill.views = parse_num(v)?,
            ("oc", "problems") => self.oc.problems = parse_num(v)?,
            ("oc", "seed") => self.oc.seed = parse_num(v)?,
            ("generate", "samples") => self.generate_samples = parse_num(v)?,
            ("manifest", k) if MANIFEST_KEYS.contains(&k) => {}
            ("", _) => bail!("key {key:?} outside of a section"),
            (s, k) => bail!("unknown key {k:?} in section [{s}]"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.classes < 2 || d.edit_dims == 0 || d.edit_dims >= d.dim || d.components == 0 {
            bail!("dataset needs classes >= 2, components >= 1 and 1 <= edit_dims < dim");
        }
        if !(d.sigma > 0.0) {
            bail!("dataset sigma must be positive");
        }
        let e = &self.edit;
        make_time_grid(e.steps, e.shift, e.skip).context("edit grid")?;
        make_time_grid(e.ddib_steps, e.shift, 0).context("ddib grid")?;
        if e.sdedit_index >= e.steps {
            bail!("sdedit_index must be below the step count");
        }
        self.edit_params(0)?.validate()?;
        self.train.validate()?;
        if self.sweep.values.is_empty() {
            bail!("sweep needs at least one value");
        }
        if self.distill.views == 0 {
            bail!("distill needs at least one view");
        }
        Ok(())
    }

    pub fn mixture(&self) -> Result<ConditionalMixture> {
        let d = &self.dataset;
        Ok(PairedMixtureSpec {
            n_classes: d.classes,
            dim: d.dim,
            edit_dims: d.edit_dims,
            components: d.components,
            sigma: d.sigma,
            seed: d.seed,
        }
        .build()?)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            dim: self.dataset.dim,
            hidden: self.model.hidden,
            layers: self.model.layers,
            freqs: self.model.freqs,
            embed: self.model.embed,
            n_classes: self.dataset.classes,
        }
    }

    /// Editing parameters for the configured method (FlowAlign or FlowEdit).
    pub fn edit_params(&self, seed: u64) -> Result<EditParams> {
        let e = &self.edit;
        let grid = make_time_grid(e.steps, e.shift, e.skip)?;
        let method = match e.method {
            Method::FlowEdit => EditMethod::FlowEdit {
                omega_src: e.omega_src,
                omega_tgt: e.omega_tgt,
            },
            _ => EditMethod::FlowAlign,
        };
        Ok(EditParams {
            method,
            omega: e.omega,
            zeta: e.zeta,
            zeta_from_eta: e.eta,
            cfg_base: e.cfg_base,
            grid,
            seed,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.dataset;
        let m = &self.model;
        let t = &self.train;
        let e = &self.edit;
        let r = &self.run;
        let join = |v: &[String]| v.join(",");
        let _ = write!(
            s,
            "[dataset]\nclasses = {}\ndim = {}\nedit_dims = {}\ncomponents = {}\nsigma = {}\nseed = {}\n\n",
            d.classes, d.dim, d.edit_dims, d.components, d.sigma, d.seed
        );
        let _ = write!(
            s,
            "[model]\nfield = {}\ncheckpoint = {}\ntrain_if_missing = {}\nhidden = {}\nlayers = {}\nfreqs = {}\nembed = {}\n\n",
            match m.field {
                FieldKind::Analytic => "analytic",
                FieldKind::Learned => "learned",
            },
            m.checkpoint.display(),
            m.train_if_missing,
            m.hidden,
            m.layers,
            m.freqs,
            m.embed
        );
        let _ = write!(
            s,
            "[train]\nsteps = {}\nbatch = {}\nlr = {}\nbeta1 = {}\nbeta2 = {}\np_drop = {}\nseed = {}\n\n",
            t.steps, t.batch, t.lr, t.beta1, t.beta2, t.p_drop, t.seed
        );
        let _ = write!(
            s,
            "[edit]\nmethod = {}\nomega = {}\nzeta = {}\neta = {}\ncfg_base = {}\nsteps = {}\nshift = {}\nskip = {}\nomega_src = {}\nomega_tgt = {}\nddib_steps = {}\nsdedit_index = {}\n\n",
            e.method.name(),
            e.omega,
            e.zeta,
            e.eta.map_or("none".to_string(), |v| v.to_string()),
            match e.cfg_base {
                CfgBase::Null => "null",
                CfgBase::Source => "source",
            },
            e.steps,
            e.shift,
            e.skip,
            e.omega_src,
            e.omega_tgt,
            e.ddib_steps,
            e.sdedit_index
        );
        let _ = write!(
            s,
            "[run]\ntasks = {}\ntask_seed = {}\nseeds = {}\ntrajectories = {}\nout = {}\n\n",
            r.tasks,
            r.task_seed,
            join(&r.seeds.iter().map(u64::to_string).collect::<Vec<_>>()),
            r.trajectories,
            r.out.display()
        );
        let _ = write!(
            s,
            "[sweep]\naxis = {}\nvalues = {}\n\n",
            self.sweep.axis.name(),
            join(&self.sweep.values)
        );
        let ds = &self.distill;
        let _ = write!(
            s,
            "[distill]\nsteps = {}\nlr_start = {}\nlr_end = {}\ngamma = {}\nt_max = {}\nt_min = {}\nviews = {}\n\n",
            ds.steps, ds.lr_start, ds.lr_end, ds.gamma, ds.t_max, ds.t_min, ds.views
        );
        let _ = write!(s, "[oc]\nproblems = {}\nseed = {}\n\n", self.oc.problems, self.oc.seed);
        let _ = write!(s, "[generate]\nsamples = {}\n", self.generate_samples);
        s
    }

    /// SHA-256 of [`Self::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
