//! Training loops that fill a checkpoint registry, one entry per epoch,
//! each carrying its validation score and per-instance validation results.

mod maxcut;
mod replay;
mod tsp;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{Gradients, Tensor, TensorError, Var};
use crate::objective::{Direction, ProblemKind};
use crate::policy::maxcut::MaxcutDims;
use crate::policy::tsp::TspDims;
use crate::policy::{Policy, PolicyError};
use crate::problems::{Identified, ProblemError};
use crate::task::Task;

pub use maxcut::{train_maxcut, DqnConfig};
pub use replay::ReplayBuffer;
pub use tsp::train_tsp;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// One epoch's snapshot. Parameters are rounded to `f32` when published so
/// that in-memory and on-disk checkpoints evaluate identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<P> {
    pub epoch: usize,
    pub params: P,
    pub val_score: f64,
    pub per_instance: BTreeMap<String, f64>,
}

/// Every retained checkpoint of one training run, ordered by epoch.
#[derive(Debug, Clone)]
pub struct CheckpointRegistry<P> {
    pub id: String,
    pub problem: ProblemKind,
    entries: Vec<Arc<Checkpoint<P>>>,
    retention: usize,
}

impl<P: Policy> CheckpointRegistry<P> {
    pub fn new(id: impl Into<String>, retention: usize) -> Self {
        Self {
            id: id.into(),
            problem: P::PROBLEM,
            entries: Vec::new(),
            retention: retention.max(1),
        }
    }

    pub fn direction(&self) -> Direction {
        self.problem.direction()
    }

    pub fn entries(&self) -> &[Arc<Checkpoint<P>>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn retention(&self) -> usize {
        self.retention
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.entries.last().map(|c| c.epoch)
    }

    /// Appends a checkpoint. Beyond the retention cap the worst-scoring entry
    /// other than the newest is dropped (later epoch loses a tie), so the best
    /// checkpoint and the most recent one always survive.
    pub fn push(&mut self, ckpt: Checkpoint<P>) -> Result<(), TrainError> {
        if let Some(last) = self.last_epoch() {
            if ckpt.epoch <= last {
                return Err(TrainError::Config(format!(
                    "epoch {} does not follow epoch {last}",
                    ckpt.epoch
                )));
            }
        }
        self.entries.push(Arc::new(ckpt));
        if self.entries.len() > self.retention {
            let dir = self.direction();
            let newest = self.entries.len() - 1;
            let mut worst = 0;
            for i in 1..newest {
                let (a, b) = (&self.entries[i], &self.entries[worst]);
                if dir.better(b.val_score, a.val_score) || a.val_score == b.val_score {
                    worst = i;
                }
            }
            self.entries.remove(worst);
        }
        Ok(())
    }

    /// Entry with the best validation score, earliest epoch on ties.
    pub fn best(&self) -> Option<&Arc<Checkpoint<P>>> {
        let scores: Vec<f64> = self.entries.iter().map(|c| c.val_score).collect();
        self.direction()
            .best_index(&scores)
            .map(|i| &self.entries[i])
    }
}

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub registry: CheckpointRegistry<P>,
    pub log: Vec<EpochLog>,
    /// Validation score of the untrained initialization.
    pub initial_val_score: f64,
}

/// Settings shared by both training loops.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Global gradient-norm clip; disabled when not positive.
    pub grad_clip: f64,
    pub retention: usize,
    pub tsp_dims: TspDims,
    pub maxcut_dims: MaxcutDims,
    pub dqn: DqnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            seed: 1,
            grad_clip: 1.0,
            retention: 100,
            tsp_dims: TspDims::default(),
            maxcut_dims: MaxcutDims::default(),
            dqn: DqnConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} is not positive",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Scores `model` on every validation instance with the task's test protocol.
/// Returns the mean objective and the per-instance map. Instances are
/// evaluated in parallel and reduced in input order.
pub fn validate<T: Task>(
    task: &T,
    model: &T::Model,
    val: &[T::Instance],
) -> Result<(f64, BTreeMap<String, f64>), PolicyError> {
    if val.is_empty() {
        return Err(PolicyError::Invalid("empty validation set".into()));
    }
    let scores = val
        .par_iter()
        .map(|inst| task.solve(model, inst))
        .collect::<Result<Vec<f64>, _>>()?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let per_instance = val
        .iter()
        .zip(&scores)
        .map(|(inst, &s)| (inst.id().to_string(), s))
        .collect();
    Ok((mean, per_instance))
}

/// Publishes the current weights: rounds them to `f32`, validates, and wraps
/// them as a checkpoint.
pub(crate) fn snapshot<T: Task>(
    task: &T,
    model: &T::Model,
    epoch: usize,
    val: &[T::Instance],
) -> Result<Checkpoint<T::Model>, TrainError> {
    let mut params = model.clone();
    params.params_mut().round_to_f32();
    if !params.params().is_finite() {
        return Err(TrainError::Diverged {
            epoch,
            detail: "non-finite parameters".into(),
        });
    }
    let (val_score, per_instance) = validate(task, &params, val)?;
    if !val_score.is_finite() {
        return Err(TrainError::Diverged {
            epoch,
            detail: format!("validation score {val_score}"),
        });
    }
    Ok(Checkpoint {
        epoch,
        params,
        val_score,
        per_instance,
    })
}

pub(crate) fn zero_grads(params: &[Tensor]) -> Vec<Tensor> {
    params.iter().map(|p| Tensor::zeros(p.shape())).collect()
}

/// Adds the gradients of `vars` (parameter leaves in layout order) into `acc`.
pub(crate) fn accumulate(acc: &mut [Tensor], grads: &Gradients, vars: &[Var]) {
    for (a, &v) in acc.iter_mut().zip(vars) {
        if let Some(g) = grads.get(v) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
pub(crate) fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}
