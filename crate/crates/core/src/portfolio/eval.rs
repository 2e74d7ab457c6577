use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::{InstanceResult, Method, ModelSet, PortfolioError, PortfolioResult};
use crate::objective::Direction;
use crate::policy::Policy;
use crate::problems::Identified;
use crate::seeding::rng_for;
use crate::task::Task;

/// Objectives of every member model on every instance, each pair evaluated once.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrix {
    pub direction: Direction,
    pub instance_ids: Vec<String>,
    /// `objectives[model][instance]`
    pub objectives: Vec<Vec<f64>>,
    /// Wall time of each cell, same layout as `objectives`.
    pub times: Vec<Vec<Duration>>,
}

impl ModelMatrix {
    pub fn models(&self) -> usize {
        self.objectives.len()
    }

    pub fn instances(&self) -> usize {
        self.instance_ids.len()
    }

    /// Best member among `subset` on instance `i`, the earlier listed model on ties.
    pub fn best_of(&self, subset: &[usize], i: usize) -> (usize, f64) {
        let mut best = subset[0];
        for &m in &subset[1..] {
            if self
                .direction
                .better(self.objectives[m][i], self.objectives[best][i])
            {
                best = m;
            }
        }
        (best, self.objectives[best][i])
    }

    /// Mean over instances of the pointwise best of `subset`.
    pub fn subset_aggregate(&self, subset: &[usize]) -> f64 {
        let total: f64 = (0..self.instances())
            .map(|i| self.best_of(subset, i).1)
            .sum();
        total / self.instances() as f64
    }

    /// Pointwise-best reduction over `subset`, reported as `method` with `k = subset.len()`.
    pub fn reduce(&self, subset: &[usize], method: Method) -> PortfolioResult {
        let rows: Vec<InstanceResult> = (0..self.instances())
            .map(|i| {
                let (chosen, objective) = self.best_of(subset, i);
                InstanceResult {
                    instance_id: self.instance_ids[i].clone(),
                    objective,
                    chosen_model: (method != Method::Single).then_some(chosen),
                    time: subset.iter().map(|&m| self.times[m][i]).sum(),
                }
            })
            .collect();
        let wall_time = rows.iter().map(|r| r.time).sum();
        PortfolioResult {
            method,
            k: subset.len(),
            rows,
            wall_time,
        }
    }

    /// ZTop over the first `k` members.
    pub fn ztop(&self, k: usize) -> Result<PortfolioResult, PortfolioError> {
        self.check_k(k)?;
        Ok(self.reduce(&(0..k).collect::<Vec<_>>(), Method::Ztop))
    }

    /// The first member alone.
    pub fn single(&self) -> Result<PortfolioResult, PortfolioError> {
        self.check_k(1)?;
        Ok(self.reduce(&[0], Method::Single))
    }

    fn check_k(&self, k: usize) -> Result<(), PortfolioError> {
        if k == 0 || k > self.models() {
            return Err(PortfolioError::InsufficientModels {
                requested: k,
                available: self.models(),
            });
        }
        Ok(())
    }
}

/// Evaluates every (model, instance) pair in parallel; results are placed by
/// index, so the matrix does not depend on scheduling.
pub fn evaluate_matrix<T: Task>(
    task: &T,
    models: &[&T::Model],
    instances: &[T::Instance],
) -> Result<ModelMatrix, PortfolioError> {
    if models.is_empty() {
        return Err(PortfolioError::Invalid("no models to evaluate".into()));
    }
    if instances.is_empty() {
        return Err(PortfolioError::Invalid("no instances to evaluate".into()));
    }
    let cells: Vec<(f64, Duration)> = (0..models.len() * instances.len())
        .into_par_iter()
        .map(|cell| {
            let (m, i) = (cell / instances.len(), cell % instances.len());
            let start = Instant::now();
            let obj = task.solve(models[m], &instances[i])?;
            Ok((obj, start.elapsed()))
        })
        .collect::<Result<_, PortfolioError>>()?;
    let rows = cells.chunks(instances.len());
    Ok(ModelMatrix {
        direction: task.direction(),
        instance_ids: instances.iter().map(|x| x.id().to_string()).collect(),
        objectives: rows
            .clone()
            .map(|r| r.iter().map(|c| c.0).collect())
            .collect(),
        times: rows.map(|r| r.iter().map(|c| c.1).collect()).collect(),
    })
}

/// Runs every member once per instance and keeps the best output.
pub fn eval_ztop<T: Task>(
    task: &T,
    models: &ModelSet<T::Model>,
    instances: &[T::Instance],
) -> Result<PortfolioResult, PortfolioError> {
    evaluate_matrix(task, &models.models(), instances)?.ztop(models.k())
}

/// The best-validation model alone.
pub fn eval_single<T: Task>(
    task: &T,
    models: &ModelSet<T::Model>,
    instances: &[T::Instance],
) -> Result<PortfolioResult, PortfolioError> {
    evaluate_matrix(task, &models.models()[..1], instances)?.single()
}

/// Uniform averaging of the members' per-step outputs.
pub fn eval_average<T: Task>(
    task: &T,
    models: &ModelSet<T::Model>,
    instances: &[T::Instance],
) -> Result<PortfolioResult, PortfolioError> {
    let members = models.models();
    let first = members[0].params();
    if members.iter().any(|m| !m.params().same_layout(first)) {
        return Err(PortfolioError::Invalid(
            "averaged models must share one architecture".into(),
        ));
    }
    let rows = instances
        .par_iter()
        .map(|inst| {
            let start = Instant::now();
            let objective = task.solve_average(&members, inst)?;
            Ok(InstanceResult {
                instance_id: inst.id().to_string(),
                objective,
                chosen_model: None,
                time: start.elapsed(),
            })
        })
        .collect::<Result<Vec<_>, PortfolioError>>()?;
    Ok(finish(Method::Average, models.k(), rows))
}

/// Best of `samples` stochastic rollouts from `model`. Each instance draws
/// from its own stream keyed by `seed` and the instance id.
pub fn eval_sampling<T: Task>(
    task: &T,
    model: &T::Model,
    instances: &[T::Instance],
    samples: usize,
    seed: u64,
) -> Result<PortfolioResult, PortfolioError> {
    let rows = instances
        .par_iter()
        .map(|inst| {
            let start = Instant::now();
            let mut rng = rng_for(seed, &format!("sampling/{}", inst.id()));
            let objective = task.solve_sampling(model, inst, samples, &mut rng)?;
            Ok(InstanceResult {
                instance_id: inst.id().to_string(),
                objective,
                chosen_model: None,
                time: start.elapsed(),
            })
        })
        .collect::<Result<Vec<_>, PortfolioError>>()?;
    Ok(finish(Method::Sampling, 1, rows))
}

fn finish(method: Method, k: usize, rows: Vec<InstanceResult>) -> PortfolioResult {
    PortfolioResult {
        method,
        k,
        wall_time: rows.iter().map(|r| r.time).sum(),
        rows,
    }
}
