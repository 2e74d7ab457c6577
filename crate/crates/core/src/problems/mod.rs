//! Problem instances, objectives, generators and exact oracles.

mod io;
mod maxcut;
mod tsp;

use std::collections::HashSet;

use thiserror::Error;

pub use io::{format_graphs, format_tsp, parse_graphs, parse_tsp};
pub use maxcut::{
    cut_value, gen_graph, maxcut_oracle, random_cut_solutions, CutAssignment, Edge, GraphFamily,
    GraphInstance, DEFAULT_START_COUNT, MAXCUT_ORACLE_MAX_N,
};
pub use tsp::{gen_tsp, tour_length, tsp_oracle, Tour, TspInstance, TSP_ORACLE_MAX_N};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid tour: {0}")]
    InvalidTour(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{what} supports n <= {max}, got n = {n}")]
    SizeLimit {
        what: &'static str,
        n: usize,
        max: usize,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("instance ids must be unique across splits; {0} repeats")]
    DuplicateId(String),
}

/// Anything with a stable string id.
pub trait Identified {
    fn id(&self) -> &str;
}

impl Identified for TspInstance {
    fn id(&self) -> &str {
        &self.id
    }
}

impl Identified for GraphInstance {
    fn id(&self) -> &str {
        &self.id
    }
}

/// Disjoint train / validation / test lists.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T: Identified> DatasetSplit<T> {
    pub fn new(train: Vec<T>, val: Vec<T>, test: Vec<T>) -> Result<Self, ProblemError> {
        let mut seen = HashSet::new();
        for inst in train.iter().chain(&val).chain(&test) {
            if !seen.insert(inst.id().to_string()) {
                return Err(ProblemError::DuplicateId(inst.id().to_string()));
            }
        }
        Ok(Self { train, val, test })
    }

    /// Splits one generated list into consecutive train / val / test chunks.
    pub fn from_sequence(mut all: Vec<T>, train: usize, val: usize) -> Result<Self, ProblemError> {
        if all.len() < train + val {
            return Err(ProblemError::InvalidSize(format!(
                "{} instances cannot fill {train} train + {val} val",
                all.len()
            )));
        }
        let test = all.split_off(train + val);
        let val_part = all.split_off(train);
        Self::new(all, val_part, test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_ids_must_be_unique() {
        let a = gen_tsp(5, 3, 1).unwrap();
        let dup = vec![a[0].clone()];
        assert!(matches!(
            DatasetSplit::new(a.clone(), dup, vec![]),
            Err(ProblemError::DuplicateId(_))
        ));
        let s = DatasetSplit::from_sequence(gen_tsp(5, 10, 1).unwrap(), 6, 2).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    }
}
