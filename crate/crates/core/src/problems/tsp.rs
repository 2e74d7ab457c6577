//! Euclidean TSP in the unit square.

use rand::Rng as _;

use super::ProblemError;
use crate::seeding::rng_for;

/// Largest instance the Held-Karp oracle accepts.
pub const TSP_ORACLE_MAX_N: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    pub id: String,
    pub coords: Vec<[f64; 2]>,
}

impl TspInstance {
    pub fn new(id: impl Into<String>, coords: Vec<[f64; 2]>) -> Result<Self, ProblemError> {
        if coords.len() < 3 {
            return Err(ProblemError::InvalidSize(format!(
                "a TSP instance needs at least 3 cities, got {}",
                coords.len()
            )));
        }
        if coords.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(ProblemError::Parameter(
                "city coordinates must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            id: id.into(),
            coords,
        })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.coords[i], self.coords[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tour {
    pub order: Vec<usize>,
}

impl Tour {
    pub fn new(order: Vec<usize>) -> Self {
        Self { order }
    }

    pub fn is_permutation_of(&self, n: usize) -> bool {
        if self.order.len() != n {
            return false;
        }
        let mut seen = vec![false; n];
        for &c in &self.order {
            if c >= n || seen[c] {
                return false;
            }
            seen[c] = true;
        }
        true
    }
}

/// `count` instances of `n` i.i.d. uniform cities, ids `tsp-{n}-{seed}-{index}`.
pub fn gen_tsp(n: usize, count: usize, seed: u64) -> Result<Vec<TspInstance>, ProblemError> {
    if n < 3 {
        return Err(ProblemError::InvalidSize(format!(
            "TSP needs n >= 3, got {n}"
        )));
    }
    let mut rng = rng_for(seed, &format!("gen_tsp/{n}"));
    Ok((0..count)
        .map(|i| TspInstance {
            id: format!("tsp-{n}-{seed}-{i}"),
            coords: (0..n)
                .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
                .collect(),
        })
        .collect())
}

/// Closed-cycle Euclidean length, including the edge back to the start.
pub fn tour_length(inst: &TspInstance, tour: &Tour) -> Result<f64, ProblemError> {
    let n = inst.n();
    if !tour.is_permutation_of(n) {
        return Err(ProblemError::InvalidTour(format!(
            "{:?} is not a permutation of 0..{n}",
            tour.order
        )));
    }
    Ok((0..n)
        .map(|i| inst.dist(tour.order[i], tour.order[(i + 1) % n]))
        .sum())
}

/// Exact optimum by Held-Karp dynamic programming, `O(2^n n^2)`.
pub fn tsp_oracle(inst: &TspInstance) -> Result<(f64, Tour), ProblemError> {
    let n = inst.n();
    if n > TSP_ORACLE_MAX_N {
        return Err(ProblemError::SizeLimit {
            what: "tsp_oracle",
            n,
            max: TSP_ORACLE_MAX_N,
        });
    }
    // City 0 is the fixed start; subsets range over cities 1..n encoded in m bits.
    let m = n - 1;
    let full = 1usize << m;
    let mut cost = vec![f64::INFINITY; full * m];
    let mut parent = vec![usize::MAX; full * m];
    for j in 0..m {
        cost[(1 << j) * m + j] = inst.dist(0, j + 1);
    }
    for set in 1..full {
        for last in 0..m {
            if set & (1 << last) == 0 {
                continue;
            }
            let here = cost[set * m + last];
            if !here.is_finite() {
                continue;
            }
            for next in 0..m {
                if set & (1 << next) != 0 {
                    continue;
                }
                let ns = set | (1 << next);
                let cand = here + inst.dist(last + 1, next + 1);
                if cand < cost[ns * m + next] {
                    cost[ns * m + next] = cand;
                    parent[ns * m + next] = last;
                }
            }
        }
    }
    let all = full - 1;
    let (mut best, mut last) = (f64::INFINITY, 0);
    for j in 0..m {
        let c = cost[all * m + j] + inst.dist(j + 1, 0);
        if c < best {
            best = c;
            last = j;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut set = all;
    let mut cur = last;
    while cur != usize::MAX {
        order.push(cur + 1);
        let prev = parent[set * m + cur];
        set &= !(1 << cur);
        cur = prev;
    }
    order.push(0);
    order.reverse();
    Ok((best, Tour::new(order)))
}
