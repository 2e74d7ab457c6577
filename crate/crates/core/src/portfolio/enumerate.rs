use super::{Method, ModelMatrix, PortfolioError, PortfolioResult};
use crate::objective::Direction;

pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1_000_000;

/// Outcome of the exhaustive k-subset search over a model matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalK {
    /// Model indices of the best subset, ascending.
    pub best_subset: Vec<usize>,
    pub best_aggregate: f64,
    /// Aggregate of the first `k` models (ZTop over the top-k).
    pub ztop_aggregate: f64,
    /// ZTop aggregate relative to the optimum, oriented so 1 means optimal
    /// and smaller is worse.
    pub ratio: f64,
}

impl OptimalK {
    pub fn result(&self, matrix: &ModelMatrix) -> PortfolioResult {
        matrix.reduce(&self.best_subset, Method::Optimal)
    }
}

fn binomial(m: usize, k: usize) -> u128 {
    let k = k.min(m - k);
    (0..k).fold(1u128, |acc, i| acc * (m - i) as u128 / (i + 1) as u128)
}

/// Enumerates every `k`-subset of the matrix's models in lexicographic order
/// and keeps the one with the best pointwise-best aggregate (first found on ties).
pub fn enumerate_optimal_k(
    matrix: &ModelMatrix,
    k: usize,
    budget: u128,
) -> Result<OptimalK, PortfolioError> {
    let m = matrix.models();
    if k == 0 || k > m {
        return Err(PortfolioError::InsufficientModels {
            requested: k,
            available: m,
        });
    }
    let combinations = binomial(m, k);
    if combinations > budget {
        return Err(PortfolioError::Budget {
            combinations,
            budget,
        });
    }
    let dir = matrix.direction;
    let mut subset: Vec<usize> = (0..k).collect();
    let ztop_aggregate = matrix.subset_aggregate(&subset);
    let mut best_subset = subset.clone();
    let mut best_aggregate = ztop_aggregate;
    loop {
        // advance to the next combination
        let Some(pos) = (0..k).rev().find(|&i| subset[i] < m - k + i) else {
            break;
        };
        subset[pos] += 1;
        for j in pos + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
        let agg = matrix.subset_aggregate(&subset);
        if dir.better(agg, best_aggregate) {
            best_aggregate = agg;
            best_subset.clone_from(&subset);
        }
    }
    let ratio = if ztop_aggregate == best_aggregate {
        1.0
    } else {
        match dir {
            Direction::Minimize => best_aggregate / ztop_aggregate,
            Direction::Maximize => ztop_aggregate / best_aggregate,
        }
    };
    Ok(OptimalK {
        best_subset,
        best_aggregate,
        ztop_aggregate,
        ratio,
    })
}

/// Per-instance objectives of every model with the winner flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub instance_ids: Vec<String>,
    /// `objectives[instance][model]`
    pub objectives: Vec<Vec<f64>>,
    /// Winning model per instance, lowest index on ties.
    pub winners: Vec<usize>,
}

impl VarianceReport {
    pub fn distinct_winners(&self) -> usize {
        let mut w = self.winners.clone();
        w.sort_unstable();
        w.dedup();
        w.len()
    }
}

/// Transposes the selected instances (`rows` indices into the matrix) into a report.
pub fn per_instance_variance_report(
    matrix: &ModelMatrix,
    rows: &[usize],
) -> Result<VarianceReport, PortfolioError> {
    if rows.is_empty() || matrix.models() == 0 {
        return Err(PortfolioError::Invalid("empty variance report".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= matrix.instances()) {
        return Err(PortfolioError::Invalid(format!(
            "instance index {bad} out of range"
        )));
    }
    let all: Vec<usize> = (0..matrix.models()).collect();
    Ok(VarianceReport {
        instance_ids: rows
            .iter()
            .map(|&i| matrix.instance_ids[i].clone())
            .collect(),
        objectives: rows
            .iter()
            .map(|&i| matrix.objectives.iter().map(|m| m[i]).collect())
            .collect(),
        winners: rows.iter().map(|&i| matrix.best_of(&all, i).0).collect(),
    })
}
