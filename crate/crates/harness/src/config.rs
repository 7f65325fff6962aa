//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use grepsnet::autodiff::{OptimizerKind, StepLr};
use grepsnet::groups::{GroupFamily, GroupSpec};
use grepsnet::layers::{
    grepsgnn_param_count, mlp_param_count, mlp_width_for_budget, mpnn_param_count, ModelKind,
    ModelSpec,
};
use grepsnet::tasks::{GenOptions, Sampling, Task};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelKind,
    pub group: GroupSpec,
    pub channels: usize,
    /// Overrides the builder's depth where it is adjustable.
    pub layers: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub scheduler: Option<StepLr>,
    /// Seeds the weights and minibatch order.
    pub seed: u64,
    /// Seeds the dataset, so models compared under one config see the same data.
    pub data_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    /// `0` trains full-batch.
    pub batch_size: usize,
    pub sampling: Sampling,
    pub steps: usize,
    pub dt: f64,
    /// Resize a non-equivariant model to this parameter count.
    pub budget: Option<usize>,
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "task", "model", "group", "channels", "layers", "epochs", "lr", "optimizer", "momentum",
    "scheduler", "step_size", "gamma", "seed", "data_seed", "train_size", "test_size",
    "batch_size", "sampling", "steps", "dt", "budget", "metrics", "checkpoint",
];

/// Task, model and group combinations the builders accept.
pub fn compatible(task: Task, model: ModelKind, group: &GroupSpec) -> Result<(), HarnessError> {
    let model_ok = match model {
        ModelKind::Mlp => true,
        ModelKind::GRepsNet => matches!(task, Task::O5 | Task::Scattering | Task::Inertia),
        ModelKind::GRepsGnn | ModelKind::Mpnn => task == Task::NBody,
        ModelKind::UniversalScalar => matches!(task, Task::O5 | Task::Scattering),
        ModelKind::UniversalVector => task == Task::NormProd,
        ModelKind::Regular => task == Task::RotPat,
    };
    if !model_ok {
        return Err(HarnessError::Validation(format!("model {model} does not run task {task}")));
    }
    let fam = group.family();
    let euclid = matches!(fam, GroupFamily::Orthogonal | GroupFamily::SpecialOrthogonal);
    let group_ok = match task {
        Task::O5 => euclid,
        Task::Inertia | Task::NBody | Task::NormProd => euclid && group.dim() == 3,
        Task::Scattering => fam == GroupFamily::Lorentz && group.dim() == 4,
        Task::RotPat => fam == GroupFamily::Cyclic && matches!(group.order(), Some(2 | 4 | 8)),
    };
    if !group_ok {
        return Err(HarnessError::Validation(format!("group {group} does not fit task {task}")));
    }
    Ok(())
}

impl RunConfig {
    /// Defaults for `task` and `model`, following the published settings
    /// where they exist and desk-scale sizes otherwise.
    pub fn new(task: Task, model: ModelKind) -> Self {
        let equivariant = model.is_equivariant();
        let (channels, lr) = match (task, equivariant) {
            (Task::O5 | Task::Scattering, true) => (100, if task == Task::O5 { 1e-3 } else { 3e-3 }),
            (Task::O5 | Task::Scattering, false) => (384, 3e-3),
            (Task::Inertia, _) => (384, 1e-3),
            (Task::NBody, _) => (32, 1e-3),
            (Task::RotPat, _) => (32, 3e-3),
            (Task::NormProd, _) => (64, 3e-3),
        };
        let (train_size, test_size) = match task {
            Task::NBody => (200, 100),
            _ => (1000, 1000),
        };
        Self {
            task,
            model,
            group: task.default_group(),
            channels,
            layers: None,
            epochs: 100,
            lr,
            optimizer: OptimizerKind::adam(),
            scheduler: None,
            seed: 0,
            data_seed: 0,
            train_size,
            test_size,
            batch_size: if matches!(task, Task::NBody | Task::RotPat) { 64 } else { 0 },
            sampling: Sampling::Gaussian,
            steps: 500,
            dt: 1e-3,
            budget: None,
            metrics: None,
            checkpoint: None,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. `task` and `model`
    /// are read first so the remaining keys override their defaults.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Validation(format!("line {}: expected `key = value`", n + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, HarnessError> {
        let lookup = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let task: Task = lookup("task")
            .ok_or_else(|| HarnessError::Validation("config needs `task`".into()))?
            .parse()
            .map_err(HarnessError::validation)?;
        let model: ModelKind = lookup("model")
            .ok_or_else(|| HarnessError::Validation("config needs `model`".into()))?
            .parse()
            .map_err(HarnessError::validation)?;
        let mut cfg = Self::new(task, model);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key. Call [`RunConfig::validate`] after a batch of updates.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
            v.parse()
                .map_err(|_| HarnessError::Validation(format!("`{key}`: cannot parse `{v}`")))
        }
        let v = value.trim();
        match key {
            "task" => self.task = v.parse().map_err(HarnessError::validation)?,
            "model" => self.model = v.parse().map_err(HarnessError::validation)?,
            "group" => self.group = v.parse().map_err(HarnessError::validation)?,
            "channels" => self.channels = num(key, v)?,
            "layers" => self.layers = Some(num(key, v)?),
            "epochs" => self.epochs = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::adam(),
                    "sgd" => OptimizerKind::sgd(0.0),
                    _ => return Err(HarnessError::Validation(format!("unknown optimizer `{v}`"))),
                }
            }
            "momentum" => {
                let m: f64 = num(key, v)?;
                match &mut self.optimizer {
                    OptimizerKind::Sgd { momentum } => *momentum = m,
                    _ => return Err(HarnessError::Validation("`momentum` needs optimizer = sgd".into())),
                }
            }
            "scheduler" => {
                self.scheduler = match v {
                    "none" => None,
                    "step" => Some(self.scheduler.unwrap_or(StepLr { step_size: 7, gamma: 0.1 })),
                    _ => return Err(HarnessError::Validation(format!("unknown scheduler `{v}`"))),
                }
            }
            "step_size" | "gamma" => {
                let s = self.scheduler.get_or_insert(StepLr { step_size: 7, gamma: 0.1 });
                if key == "gamma" {
                    s.gamma = num(key, v)?;
                } else {
                    s.step_size = num(key, v)?;
                }
            }
            "seed" => self.seed = num(key, v)?,
            "data_seed" => self.data_seed = num(key, v)?,
            "train_size" => self.train_size = num(key, v)?,
            "test_size" => self.test_size = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "sampling" => self.sampling = v.parse().map_err(HarnessError::validation)?,
            "steps" => self.steps = num(key, v)?,
            "dt" => self.dt = num(key, v)?,
            "budget" => self.budget = Some(num(key, v)?),
            "metrics" => self.metrics = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            _ => return Err(HarnessError::Validation(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        compatible(self.task, self.model, &self.group)?;
        let positive = [
            ("channels", self.channels),
            ("train_size", self.train_size),
            ("test_size", self.test_size),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::Validation(format!("`{k}` must be positive")));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(HarnessError::Validation("`lr` must be positive".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(HarnessError::Validation("`dt` must be positive".into()));
        }
        if self.layers == Some(0) {
            return Err(HarnessError::Validation("`layers` must be positive".into()));
        }
        Ok(())
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            group: Some(self.group),
            sampling: self.sampling,
            steps: self.steps,
            dt: self.dt,
        }
    }

    /// The model spec this run trains, with widths resized to `budget`.
    pub fn model_spec(&self) -> Result<ModelSpec, HarnessError> {
        let mut spec = ModelSpec::for_task(self.model, self.task, self.group, self.channels)
            .map_err(HarnessError::validation)?;
        if let Some(l) = self.layers {
            spec.layers = l;
        }
        if let Some(budget) = self.budget {
            let d = self.group.dim();
            spec.channels = match self.model {
                ModelKind::Mlp => {
                    let n_in = match self.task {
                        Task::RotPat => grepsnet::tasks::ROTPAT_FEATURES,
                        _ => spec.input.payload_len(d),
                    };
                    mlp_width_for_budget(n_in, spec.output.payload_len(d), spec.layers, budget)
                }
                ModelKind::Mpnn => (1..=4096)
                    .min_by_key(|&w| mpnn_param_count(w, spec.layers).abs_diff(budget))
                    .unwrap_or(1),
                ModelKind::GRepsGnn => (1..=4096)
                    .min_by_key(|&c| grepsgnn_param_count(c, spec.layers).abs_diff(budget))
                    .unwrap_or(1),
                _ => {
                    return Err(HarnessError::Validation(format!(
                        "`budget` is not supported for model {}",
                        self.model
                    )))
                }
            };
            spec.hidden = ModelSpec::for_task(self.model, self.task, self.group, spec.channels)
                .map_err(HarnessError::validation)?
                .hidden;
        }
        Ok(spec)
    }
}

/// Parameter count of a plain MLP at `spec`'s shape, for budget tables.
pub fn mlp_count_for(spec: &ModelSpec) -> usize {
    let d = spec.group.dim();
    mlp_param_count(spec.input.payload_len(d), spec.output.payload_len(d), spec.layers, spec.channels)
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task = {}", self.task)?;
        writeln!(f, "model = {}", self.model)?;
        writeln!(f, "group = {}", self.group)?;
        writeln!(f, "channels = {}", self.channels)?;
        if let Some(l) = self.layers {
            writeln!(f, "layers = {l}")?;
        }
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "lr = {}", self.lr)?;
        match self.optimizer {
            OptimizerKind::Adam { .. } => writeln!(f, "optimizer = adam")?,
            OptimizerKind::Sgd { momentum } => {
                writeln!(f, "optimizer = sgd")?;
                writeln!(f, "momentum = {momentum}")?;
            }
        }
        if let Some(s) = self.scheduler {
            writeln!(f, "scheduler = step\nstep_size = {}\ngamma = {}", s.step_size, s.gamma)?;
        }
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "data_seed = {}", self.data_seed)?;
        writeln!(f, "train_size = {}", self.train_size)?;
        writeln!(f, "test_size = {}", self.test_size)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "sampling = {}", self.sampling)?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "dt = {}", self.dt)?;
        if let Some(b) = self.budget {
            writeln!(f, "budget = {b}")?;
        }
        if let Some(p) = &self.metrics {
            writeln!(f, "metrics = {}", p.display())?;
        }
        if let Some(p) = &self.checkpoint {
            writeln!(f, "checkpoint = {}", p.display())?;
        }
        Ok(())
    }
}
