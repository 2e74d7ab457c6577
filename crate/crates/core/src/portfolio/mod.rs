//! Top-k checkpoint selection and the ensemble evaluation modes.
//!
//! Every member model is evaluated once per instance into a [`ModelMatrix`];
//! Single, ZTop and the optimal-subset search are all reductions over it.

mod enumerate;
mod eval;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::objective::{Direction, ProblemKind};
use crate::policy::{Policy, PolicyError};
use crate::training::{Checkpoint, CheckpointRegistry};

pub use enumerate::{
    enumerate_optimal_k, per_instance_variance_report, OptimalK, VarianceReport,
    DEFAULT_ENUMERATION_BUDGET,
};
pub use eval::{eval_average, eval_sampling, eval_single, eval_ztop, evaluate_matrix, ModelMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PortfolioError {
    #[error("requested {requested} models but only {available} are available")]
    InsufficientModels { requested: usize, available: usize },
    #[error(
        "{combinations} subsets exceed the enumeration budget of {budget}; lower the pool size"
    )]
    Budget { combinations: u128, budget: u128 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Ensemble method, as written in result files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Single,
    Average,
    Ztop,
    Sampling,
    Optimal,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::Average => "average",
            Method::Ztop => "ztop",
            Method::Sampling => "sampling",
            Method::Optimal => "optimal",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "single" => Method::Single,
            "average" => Method::Average,
            "ztop" => Method::Ztop,
            "sampling" => Method::Sampling,
            "optimal" => Method::Optimal,
            other => return Err(format!("unknown method {other:?}")),
        })
    }
}

/// Which checkpoints are eligible for top-k selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionPool {
    #[default]
    All,
    /// Only epochs in the final quarter of training.
    LastQuarter,
}

impl FromStr for SelectionPool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SelectionPool::All),
            "last_quarter" => Ok(SelectionPool::LastQuarter),
            other => Err(format!("unknown selection pool {other:?}")),
        }
    }
}

/// The k selected checkpoints, best validation score first.
#[derive(Debug, Clone)]
pub struct ModelSet<P> {
    pub source: String,
    pub problem: ProblemKind,
    checkpoints: Vec<Arc<Checkpoint<P>>>,
}

impl<P: Policy> ModelSet<P> {
    pub fn k(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn direction(&self) -> Direction {
        self.problem.direction()
    }

    pub fn checkpoints(&self) -> &[Arc<Checkpoint<P>>] {
        &self.checkpoints
    }

    pub fn models(&self) -> Vec<&P> {
        self.checkpoints.iter().map(|c| &c.params).collect()
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.checkpoints.iter().map(|c| c.epoch).collect()
    }

    /// The best `k` members; top-k sets are nested by construction.
    pub fn prefix(&self, k: usize) -> Result<Self, PortfolioError> {
        if k == 0 || k > self.k() {
            return Err(PortfolioError::InsufficientModels {
                requested: k,
                available: self.k(),
            });
        }
        Ok(Self {
            source: self.source.clone(),
            problem: self.problem,
            checkpoints: self.checkpoints[..k].to_vec(),
        })
    }
}

/// The `k` checkpoints with the best validation score, earlier epoch first on ties.
pub fn select_top_k<P: Policy>(
    reg: &CheckpointRegistry<P>,
    k: usize,
) -> Result<ModelSet<P>, PortfolioError> {
    select_top_k_from(reg, k, SelectionPool::All)
}

pub fn select_top_k_from<P: Policy>(
    reg: &CheckpointRegistry<P>,
    k: usize,
    pool: SelectionPool,
) -> Result<ModelSet<P>, PortfolioError> {
    let mut eligible: Vec<&Arc<Checkpoint<P>>> = match pool {
        SelectionPool::All => reg.entries().iter().collect(),
        SelectionPool::LastQuarter => {
            let last = reg.last_epoch().unwrap_or(0);
            let cutoff = last - last / 4;
            reg.entries().iter().filter(|c| c.epoch > cutoff).collect()
        }
    };
    if k == 0 || k > eligible.len() {
        return Err(PortfolioError::InsufficientModels {
            requested: k,
            available: eligible.len(),
        });
    }
    let dir = reg.direction();
    eligible.sort_by(|a, b| {
        if dir.better(a.val_score, b.val_score) {
            std::cmp::Ordering::Less
        } else if dir.better(b.val_score, a.val_score) {
            std::cmp::Ordering::Greater
        } else {
            a.epoch.cmp(&b.epoch)
        }
    });
    Ok(ModelSet {
        source: reg.id.clone(),
        problem: reg.problem,
        checkpoints: eligible.into_iter().take(k).cloned().collect(),
    })
}

/// One instance's outcome under one method.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub instance_id: String,
    pub objective: f64,
    /// Index into the model set of the member whose output was kept (ZTop and optimal only).
    pub chosen_model: Option<usize>,
    pub time: Duration,
}

/// Per-instance results of one method at one ensemble size, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioResult {
    pub method: Method,
    pub k: usize,
    pub rows: Vec<InstanceResult>,
    pub wall_time: Duration,
}

impl PortfolioResult {
    pub fn aggregate(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.objective).sum::<f64>() / self.rows.len() as f64
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::tsp::{TspDims, TspPolicyParams};
    use crate::seeding::rng_for;
    use std::collections::BTreeMap;

    fn registry(scores: &[f64]) -> CheckpointRegistry<TspPolicyParams> {
        let dims = TspDims {
            d: 4,
            d_ff: 4,
            layers: 1,
        };
        let mut reg = CheckpointRegistry::new("r", 100);
        for (i, &s) in scores.iter().enumerate() {
            reg.push(Checkpoint {
                epoch: i + 1,
                params: TspPolicyParams::init(dims, &mut rng_for(i as u64, "init")),
                val_score: s,
                per_instance: BTreeMap::new(),
            })
            .unwrap();
        }
        reg
    }

    #[test]
    fn top_k_by_score() {
        let reg = registry(&[3.1, 2.9, 3.0]);
        assert_eq!(select_top_k(&reg, 2).unwrap().epochs(), vec![2, 3]);
        assert_eq!(select_top_k(&reg, 3).unwrap().epochs(), vec![2, 3, 1]);
        assert!(matches!(
            select_top_k(&reg, 4),
            Err(PortfolioError::InsufficientModels {
                requested: 4,
                available: 3
            })
        ));
        assert!(select_top_k(&reg, 0).is_err());
    }

    #[test]
    fn ties_go_to_earlier_epoch() {
        let reg = registry(&[5.0, 5.0, 5.0, 2.5, 9.0, 9.0, 2.5]);
        assert_eq!(select_top_k(&reg, 1).unwrap().epochs(), vec![4]);
        assert_eq!(select_top_k(&reg, 3).unwrap().epochs(), vec![4, 7, 1]);
    }

    #[test]
    fn last_quarter_pool() {
        let reg = registry(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3.0, 2.0]);
        let set = select_top_k_from(&reg, 2, SelectionPool::LastQuarter).unwrap();
        assert_eq!(set.epochs(), vec![8, 7]);
        assert!(select_top_k_from(&reg, 3, SelectionPool::LastQuarter).is_err());
    }

    #[test]
    fn prefixes_are_nested() {
        let reg = registry(&[4.0, 3.0, 2.0, 1.0]);
        let set = select_top_k(&reg, 4).unwrap();
        for k in 1..=4 {
            assert_eq!(set.prefix(k).unwrap().epochs(), set.epochs()[..k].to_vec());
        }
        assert!(set.prefix(5).is_err());
    }

    #[test]
    fn method_tags_round_trip() {
        for m in [
            Method::Single,
            Method::Average,
            Method::Ztop,
            Method::Sampling,
            Method::Optimal,
        ] {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
    }
}
