use std::fmt;
use std::str::FromStr;

/// Whether smaller or larger objective values are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Minimize => a < b,
            Direction::Maximize => a > b,
        }
    }

    /// Index of the best value, earliest index on ties.
    pub fn best_index(self, values: &[f64]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            match best {
                Some(b) if !self.better(v, values[b]) => {}
                _ => best = Some(i),
            }
        }
        best
    }

    /// The worst representable objective, used to seed best-of reductions.
    pub fn worst(self) -> f64 {
        match self {
            Direction::Minimize => f64::INFINITY,
            Direction::Maximize => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Tsp,
    Maxcut,
}

impl ProblemKind {
    pub fn tag(self) -> &'static str {
        match self {
            ProblemKind::Tsp => "tsp",
            ProblemKind::Maxcut => "maxcut",
        }
    }

    /// Tour length is minimized; cut value (or approximation ratio) is maximized.
    pub fn direction(self) -> Direction {
        match self {
            ProblemKind::Tsp => Direction::Minimize,
            ProblemKind::Maxcut => Direction::Maximize,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsp" => Ok(ProblemKind::Tsp),
            "maxcut" => Ok(ProblemKind::Maxcut),
            other => Err(format!(
                "unknown problem {other:?} (expected tsp or maxcut)"
            )),
        }
    }
}
