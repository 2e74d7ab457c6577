//! Flat `key = value` experiment configuration. Unknown keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::objective::ProblemKind;
use crate::policy::maxcut::MaxcutDims;
use crate::policy::tsp::TspDims;
use crate::portfolio::{Method, SelectionPool};
use crate::problems::{GraphFamily, MAXCUT_ORACLE_MAX_N};
use crate::training::{DqnConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub n: usize,
    /// Test instance size; the training size when unset.
    pub test_n: Option<usize>,
    pub family: String,
    /// Generation parameter (ER edge probability or BA attachment count);
    /// 0.15 for ER and 4 for BA when unset.
    pub family_param: Option<f64>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub retention: usize,
    pub tsp_d: usize,
    pub tsp_d_ff: usize,
    pub tsp_layers: usize,
    pub maxcut_d: usize,
    pub maxcut_rounds: usize,
    pub replay_capacity: usize,
    pub gamma: f64,
    pub target_sync: usize,
    pub train_every: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub max_steps: Option<usize>,
    pub start_count: usize,
    pub ensemble_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub samples: usize,
    pub selection_pool: SelectionPool,
    pub enumerate_k: usize,
    pub enumerate_pool: usize,
    pub enumeration_budget: u128,
    pub variance_instances: usize,
    pub variance_models: usize,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Record wall times in the results; off by default so outputs are
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Tsp,
            n: 10,
            test_n: None,
            family: "er".into(),
            family_param: None,
            train_size: 2000,
            val_size: 500,
            test_size: 500,
            epochs: 30,
            batch_size: 16,
            lr: 5e-4,
            grad_clip: 1.0,
            retention: 100,
            tsp_d: 32,
            tsp_d_ff: 64,
            tsp_layers: 2,
            maxcut_d: 16,
            maxcut_rounds: 2,
            replay_capacity: 5000,
            gamma: 0.95,
            target_sync: 50,
            train_every: 4,
            eps_start: 1.0,
            eps_end: 0.05,
            max_steps: None,
            start_count: 50,
            ensemble_sizes: vec![1, 3, 5, 10],
            methods: vec![Method::Single, Method::Average, Method::Ztop],
            samples: 1280,
            selection_pool: SelectionPool::All,
            enumerate_k: 3,
            enumerate_pool: 20,
            enumeration_budget: crate::portfolio::DEFAULT_ENUMERATION_BUDGET,
            variance_instances: 6,
            variance_models: 10,
            seeds: vec![1],
            workers: 1,
            output_dir: PathBuf::from("out"),
            timing: false,
        }
    }
}

/// Every accepted key, in the order `to_text` writes them.
pub const KEYS: &[&str] = &[
    "problem",
    "n",
    "test_n",
    "family",
    "family_param",
    "train_size",
    "val_size",
    "test_size",
    "epochs",
    "batch_size",
    "lr",
    "grad_clip",
    "retention",
    "tsp_d",
    "tsp_d_ff",
    "tsp_layers",
    "maxcut_d",
    "maxcut_rounds",
    "replay_capacity",
    "gamma",
    "target_sync",
    "train_every",
    "eps_start",
    "eps_end",
    "max_steps",
    "start_count",
    "ensemble_sizes",
    "methods",
    "samples",
    "selection_pool",
    "enumerate_k",
    "enumerate_pool",
    "enumeration_budget",
    "variance_instances",
    "variance_models",
    "seeds",
    "workers",
    "output_dir",
    "timing",
];

/// Keys that do not change any result and are left out of the config hash.
const UNHASHED: &[&str] = &["workers", "output_dir"];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, HarnessError> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref()
        .map_or_else(|| "auto".into(), ToString::to_string)
}

impl ExperimentConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(HarnessError::Config(format!(
                    "line {}: duplicate key {key:?}",
                    i + 1
                )));
            }
            cfg.set(key, value.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let v = value;
        match key {
            "problem" => {
                self.problem = v
                    .parse()
                    .map_err(|e: String| HarnessError::Config(format!("problem: {e}")))?
            }
            "n" => self.n = parse_num(key, v)?,
            "test_n" => self.test_n = parse_auto(key, v)?,
            "family" => self.family = v.to_string(),
            "family_param" => self.family_param = parse_auto(key, v)?,
            "train_size" => self.train_size = parse_num(key, v)?,
            "val_size" => self.val_size = parse_num(key, v)?,
            "test_size" => self.test_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "grad_clip" => self.grad_clip = parse_num(key, v)?,
            "retention" => self.retention = parse_num(key, v)?,
            "tsp_d" => self.tsp_d = parse_num(key, v)?,
            "tsp_d_ff" => self.tsp_d_ff = parse_num(key, v)?,
            "tsp_layers" => self.tsp_layers = parse_num(key, v)?,
            "maxcut_d" => self.maxcut_d = parse_num(key, v)?,
            "maxcut_rounds" => self.maxcut_rounds = parse_num(key, v)?,
            "replay_capacity" => self.replay_capacity = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "target_sync" => self.target_sync = parse_num(key, v)?,
            "train_every" => self.train_every = parse_num(key, v)?,
            "eps_start" => self.eps_start = parse_num(key, v)?,
            "eps_end" => self.eps_end = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_auto(key, v)?,
            "start_count" => self.start_count = parse_num(key, v)?,
            "ensemble_sizes" => self.ensemble_sizes = parse_list(key, v)?,
            "methods" => {
                self.methods = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|e: String| HarnessError::Config(format!("methods: {e}")))
                    })
                    .collect::<Result<_, _>>()?
            }
            "samples" => self.samples = parse_num(key, v)?,
            "selection_pool" => {
                self.selection_pool = v
                    .parse()
                    .map_err(|e: String| HarnessError::Config(format!("selection_pool: {e}")))?
            }
            "enumerate_k" => self.enumerate_k = parse_num(key, v)?,
            "enumerate_pool" => self.enumerate_pool = parse_num(key, v)?,
            "enumeration_budget" => self.enumeration_budget = parse_num(key, v)?,
            "variance_instances" => self.variance_instances = parse_num(key, v)?,
            "variance_models" => self.variance_models = parse_num(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "timing" => self.timing = parse_num(key, v)?,
            other => return Err(HarnessError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "problem" => self.problem.tag().into(),
            "n" => self.n.to_string(),
            "test_n" => auto(&self.test_n),
            "family" => self.family.clone(),
            "family_param" => auto(&self.family_param),
            "train_size" => self.train_size.to_string(),
            "val_size" => self.val_size.to_string(),
            "test_size" => self.test_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "retention" => self.retention.to_string(),
            "tsp_d" => self.tsp_d.to_string(),
            "tsp_d_ff" => self.tsp_d_ff.to_string(),
            "tsp_layers" => self.tsp_layers.to_string(),
            "maxcut_d" => self.maxcut_d.to_string(),
            "maxcut_rounds" => self.maxcut_rounds.to_string(),
            "replay_capacity" => self.replay_capacity.to_string(),
            "gamma" => self.gamma.to_string(),
            "target_sync" => self.target_sync.to_string(),
            "train_every" => self.train_every.to_string(),
            "eps_start" => self.eps_start.to_string(),
            "eps_end" => self.eps_end.to_string(),
            "max_steps" => auto(&self.max_steps),
            "start_count" => self.start_count.to_string(),
            "ensemble_sizes" => join(&self.ensemble_sizes),
            "methods" => join(&self.methods),
            "samples" => self.samples.to_string(),
            "selection_pool" => match self.selection_pool {
                SelectionPool::All => "all".into(),
                SelectionPool::LastQuarter => "last_quarter".into(),
            },
            "enumerate_k" => self.enumerate_k.to_string(),
            "enumerate_pool" => self.enumerate_pool.to_string(),
            "enumeration_budget" => self.enumeration_budget.to_string(),
            "variance_instances" => self.variance_instances.to_string(),
            "variance_models" => self.variance_models.to_string(),
            "seeds" => join(&self.seeds),
            "workers" => self.workers.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "timing" => self.timing.to_string(),
            other => unreachable!("unlisted key {other}"),
        }
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    /// Hash of every result-affecting key.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for key in KEYS.iter().filter(|k| !UNHASHED.contains(k)) {
            h.update(format!("{key}={}\n", self.value_of(key)));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn test_n(&self) -> usize {
        self.test_n.unwrap_or(self.n)
    }

    pub fn graph_family(&self) -> Result<GraphFamily, HarnessError> {
        let param = self.family_param.unwrap_or(match self.family.as_str() {
            "ba" => 4.0,
            _ => 0.15,
        });
        GraphFamily::from_tag(&self.family, param)
            .map_err(|e| HarnessError::Config(format!("family: {e}")))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            grad_clip: self.grad_clip,
            retention: self.retention,
            tsp_dims: TspDims {
                d: self.tsp_d,
                d_ff: self.tsp_d_ff,
                layers: self.tsp_layers,
            },
            maxcut_dims: MaxcutDims {
                d: self.maxcut_d,
                rounds: self.maxcut_rounds,
            },
            dqn: DqnConfig {
                replay_capacity: self.replay_capacity,
                gamma: self.gamma,
                target_sync: self.target_sync,
                train_every: self.train_every,
                eps_start: self.eps_start,
                eps_end: self.eps_end,
                max_steps: self.max_steps,
            },
        }
    }

    /// Field-level checks; the first violation is reported.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        let min_n = match self.problem {
            ProblemKind::Tsp => 3,
            ProblemKind::Maxcut => 2,
        };
        if self.n < min_n || self.test_n() < min_n {
            return fail(format!("n and test_n must be at least {min_n}"));
        }
        if self.problem == ProblemKind::Maxcut {
            self.graph_family()?;
            if self.n > MAXCUT_ORACLE_MAX_N {
                return fail(format!(
                    "n: validation graphs need an exact optimum, so n <= {MAXCUT_ORACLE_MAX_N}"
                ));
            }
            if self.start_count == 0 {
                return fail("start_count must be at least 1".into());
            }
            if self.methods.contains(&Method::Sampling) {
                return fail("methods: sampling is only defined for tsp".into());
            }
        }
        if self.train_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return fail("train_size, val_size and test_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.retention == 0 {
            return fail("retention must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        if self.methods.is_empty() {
            return fail("methods must not be empty".into());
        }
        if self.ensemble_sizes.is_empty() {
            return fail("ensemble_sizes must not be empty".into());
        }
        let available = self.epochs.min(self.retention);
        for &k in &self.ensemble_sizes {
            if k == 0 || k > available {
                return fail(format!(
                    "ensemble_sizes: {k} is outside 1..={available} (epochs and retention bound it)"
                ));
            }
        }
        if self.samples == 0 {
            return fail("samples must be at least 1".into());
        }
        if self.enumerate_k == 0 || self.enumerate_k > self.enumerate_pool {
            return fail("enumerate_k must be in 1..=enumerate_pool".into());
        }
        if self.enumerate_pool > available {
            return fail(format!("enumerate_pool must be at most {available}"));
        }
        if self.variance_models == 0 || self.variance_models > available {
            return fail(format!("variance_models must be in 1..={available}"));
        }
        if self.variance_instances == 0 || self.variance_instances > self.val_size {
            return fail("variance_instances must be in 1..=val_size".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if self.replay_capacity == 0 || self.target_sync == 0 || self.train_every == 0 {
            return fail("replay_capacity, target_sync and train_every must be at least 1".into());
        }
        if self.max_steps == Some(0) {
            return fail("max_steps must be at least 1".into());
        }
        Ok(())
    }
}

fn strip(e: HarnessError) -> String {
    match e {
        HarnessError::Config(m) => m,
        other => other.to_string(),
    }
}
