//! Weighted MaxCut on Erdős–Rényi and Barabási–Albert graphs with ±1 weights.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::ProblemError;
use crate::seeding::rng_for;

/// Largest graph the exhaustive oracle accepts.
pub const MAXCUT_ORACLE_MAX_N: usize = 22;

/// Number of pre-generated starts shared by every evaluation mode.
pub const DEFAULT_START_COUNT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphFamily {
    /// Erdős–Rényi with edge probability `p`.
    Er { p: f64 },
    /// Barabási–Albert with `m` edges per attached vertex.
    Ba { m: usize },
}

impl GraphFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            GraphFamily::Er { .. } => "er",
            GraphFamily::Ba { .. } => "ba",
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            GraphFamily::Er { p } => p,
            GraphFamily::Ba { m } => m as f64,
        }
    }

    pub fn from_tag(tag: &str, param: f64) -> Result<Self, ProblemError> {
        match tag {
            "er" => Ok(GraphFamily::Er { p: param }),
            "ba" if param >= 0.0 && param.fract() == 0.0 => {
                Ok(GraphFamily::Ba { m: param as usize })
            }
            _ => Err(ProblemError::Parameter(format!(
                "unknown graph family {tag} with parameter {param}"
            ))),
        }
    }
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphFamily::Er { p } => write!(f, "ER(p={p})"),
            GraphFamily::Ba { m } => write!(f, "BA(m={m})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: i64,
}

/// An undirected graph; absent pairs carry weight zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance {
    pub id: String,
    pub n: usize,
    pub edges: Vec<Edge>,
    pub family: GraphFamily,
}

impl GraphInstance {
    pub fn new(
        id: impl Into<String>,
        n: usize,
        mut edges: Vec<Edge>,
        family: GraphFamily,
    ) -> Result<Self, ProblemError> {
        for e in &mut edges {
            if e.u > e.v {
                std::mem::swap(&mut e.u, &mut e.v);
            }
            if e.u == e.v || e.v >= n {
                return Err(ProblemError::Parameter(format!(
                    "bad edge ({}, {}) in a graph of {n} vertices",
                    e.u, e.v
                )));
            }
            if e.w == 0 {
                return Err(ProblemError::Parameter(
                    "zero-weight edges are represented by absence".into(),
                ));
            }
        }
        edges.sort_by_key(|e| (e.u, e.v));
        if edges
            .windows(2)
            .any(|w| (w[0].u, w[0].v) == (w[1].u, w[1].v))
        {
            return Err(ProblemError::Parameter("duplicate edge".into()));
        }
        Ok(Self {
            id: id.into(),
            n,
            edges,
            family,
        })
    }

    /// Per-vertex `(neighbor, weight)` lists in ascending neighbor order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, i64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.u].push((e.v, e.w));
            adj[e.v].push((e.u, e.w));
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|&(u, _)| u);
        }
        adj
    }

    /// Relabels vertex `i` as `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> GraphInstance {
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (perm[e.u], perm[e.v]);
                Edge {
                    u: a.min(b),
                    v: a.max(b),
                    w: e.w,
                }
            })
            .collect();
        GraphInstance::new(self.id.clone(), self.n, edges, self.family)
            .expect("relabel of a valid graph")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CutAssignment {
    pub side: Vec<u8>,
}

impl CutAssignment {
    pub fn new(side: Vec<u8>) -> Self {
        Self { side }
    }

    pub fn complement(&self) -> Self {
        Self {
            side: self.side.iter().map(|s| 1 - s).collect(),
        }
    }

    pub fn flip(&mut self, v: usize) {
        self.side[v] ^= 1;
    }
}

pub fn gen_graph(
    family: GraphFamily,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<GraphInstance>, ProblemError> {
    match family {
        GraphFamily::Er { p } if !(0.0..=1.0).contains(&p) => {
            return Err(ProblemError::Parameter(format!(
                "ER edge probability must be in [0, 1], got {p}"
            )))
        }
        GraphFamily::Ba { m } if m == 0 || m >= n => {
            return Err(ProblemError::Parameter(format!(
                "BA attachment count must satisfy 1 <= m < n, got m={m}, n={n}"
            )))
        }
        _ => {}
    }
    if n < 2 {
        return Err(ProblemError::InvalidSize(format!(
            "graphs need n >= 2, got {n}"
        )));
    }
    let tag = family.tag();
    let mut rng = rng_for(seed, &format!("gen_graph/{tag}/{}/{n}", family.param()));
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let pairs = match family {
            GraphFamily::Er { p } => {
                let mut pairs = Vec::new();
                for u in 0..n {
                    for v in u + 1..n {
                        if rng.gen::<f64>() < p {
                            pairs.push((u, v));
                        }
                    }
                }
                pairs
            }
            GraphFamily::Ba { m } => barabasi_albert(n, m, &mut rng),
        };
        let edges = pairs
            .into_iter()
            .map(|(u, v)| Edge {
                u,
                v,
                w: if rng.gen::<bool>() { 1 } else { -1 },
            })
            .collect();
        out.push(GraphInstance::new(
            format!("{tag}-{n}-{seed}-{i}"),
            n,
            edges,
            family,
        )?);
    }
    Ok(out)
}

/// Clique on `m` seed vertices, then each new vertex links to `m` distinct
/// existing vertices drawn proportionally to degree.
fn barabasi_albert(n: usize, m: usize, rng: &mut crate::seeding::Rng) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    // each endpoint appears once per incident edge
    let mut endpoints: Vec<usize> = Vec::new();
    for u in 0..m {
        for v in u + 1..m {
            pairs.push((u, v));
            endpoints.extend([u, v]);
        }
    }
    for new in m..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        while targets.len() < m {
            let t = if endpoints.is_empty() {
                rng.gen_range(0..new)
            } else {
                *endpoints.choose(rng).expect("nonempty")
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            pairs.push((t, new));
            endpoints.extend([t, new]);
        }
    }
    pairs
}

pub fn cut_value(g: &GraphInstance, a: &CutAssignment) -> Result<i64, ProblemError> {
    if a.side.len() != g.n {
        return Err(ProblemError::Shape(format!(
            "assignment of length {} for a graph of {} vertices",
            a.side.len(),
            g.n
        )));
    }
    Ok(g.edges
        .iter()
        .filter(|e| a.side[e.u] != a.side[e.v])
        .map(|e| e.w)
        .sum())
}

/// Exhaustive optimum over the `2^(n-1)` assignments with the last vertex on side 0,
/// walked in Gray-code order so each step is one incremental flip.
pub fn maxcut_oracle(g: &GraphInstance) -> Result<(i64, CutAssignment), ProblemError> {
    let n = g.n;
    if n > MAXCUT_ORACLE_MAX_N {
        return Err(ProblemError::SizeLimit {
            what: "maxcut_oracle",
            n,
            max: MAXCUT_ORACLE_MAX_N,
        });
    }
    let adj = g.adjacency();
    let mut side = vec![0u8; n];
    let mut value = 0i64;
    let mut best = 0i64;
    let mut best_side = side.clone();
    let free = n.saturating_sub(1);
    for step in 1u64..(1u64 << free) {
        let v = step.trailing_zeros() as usize;
        let delta: i64 = adj[v]
            .iter()
            .map(|&(u, w)| if side[u] == side[v] { w } else { -w })
            .sum();
        side[v] ^= 1;
        value += delta;
        if value > best {
            best = value;
            best_side.copy_from_slice(&side);
        }
    }
    Ok((best, CutAssignment::new(best_side)))
}

/// `count` uniformly random assignments for `g`, keyed by `(seed, g.id)` so the
/// list is independent of which other graphs are in the set.
pub fn random_cut_solutions(g: &GraphInstance, count: usize, seed: u64) -> Vec<CutAssignment> {
    let mut rng = rng_for(seed, &format!("starts/{}", g.id));
    (0..count)
        .map(|_| CutAssignment::new((0..g.n).map(|_| rng.gen_range(0..2u8)).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize, i64)]) -> GraphInstance {
        GraphInstance::new(
            "t",
            n,
            edges.iter().map(|&(u, v, w)| Edge { u, v, w }).collect(),
            GraphFamily::Er { p: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn er_extremes() {
        let full = gen_graph(GraphFamily::Er { p: 1.0 }, 8, 2, 3).unwrap();
        assert!(full.iter().all(|g| g.edges.len() == 28));
        let empty = gen_graph(GraphFamily::Er { p: 0.0 }, 8, 2, 3).unwrap();
        assert!(empty.iter().all(|g| g.edges.is_empty()));
    }

    #[test]
    fn generation_is_deterministic() {
        for fam in [GraphFamily::Er { p: 0.3 }, GraphFamily::Ba { m: 3 }] {
            assert_eq!(
                gen_graph(fam, 12, 4, 8).unwrap(),
                gen_graph(fam, 12, 4, 8).unwrap()
            );
        }
    }

    #[test]
    fn ba_edge_count_and_validity() {
        let n = 20;
        let m = 4;
        for g in gen_graph(GraphFamily::Ba { m }, n, 5, 1).unwrap() {
            assert_eq!(g.edges.len(), m * (m - 1) / 2 + (n - m) * m);
            assert!(g.edges.iter().all(|e| e.u < e.v && e.w.abs() == 1));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(gen_graph(GraphFamily::Er { p: 1.5 }, 5, 1, 0).is_err());
        assert!(gen_graph(GraphFamily::Ba { m: 5 }, 5, 1, 0).is_err());
        assert!(gen_graph(GraphFamily::Ba { m: 0 }, 5, 1, 0).is_err());
    }

    #[test]
    fn duplicate_and_self_loops_rejected() {
        let fam = GraphFamily::Er { p: 0.5 };
        assert!(GraphInstance::new("x", 3, vec![Edge { u: 1, v: 1, w: 1 }], fam).is_err());
        assert!(GraphInstance::new(
            "x",
            3,
            vec![Edge { u: 0, v: 1, w: 1 }, Edge { u: 1, v: 0, w: -1 }],
            fam
        )
        .is_err());
    }

    #[test]
    fn triangle_cut() {
        let g = graph(3, &[(0, 1, 1), (0, 2, 1), (1, 2, 1)]);
        let a = CutAssignment::new(vec![0, 1, 1]);
        assert_eq!(cut_value(&g, &a).unwrap(), 2);
        assert_eq!(cut_value(&g, &a.complement()).unwrap(), 2);
        assert!(cut_value(&g, &CutAssignment::new(vec![0, 1])).is_err());
    }

    #[test]
    fn cut_matches_edge_loop() {
        let g = &gen_graph(GraphFamily::Er { p: 0.4 }, 12, 1, 5).unwrap()[0];
        let a = &random_cut_solutions(g, 1, 2)[0];
        let mut s = 0;
        for e in &g.edges {
            if a.side[e.u] != a.side[e.v] {
                s += e.w;
            }
        }
        assert_eq!(cut_value(g, a).unwrap(), s);
    }

    #[test]
    fn oracle_small_cases() {
        assert_eq!(maxcut_oracle(&graph(2, &[(0, 1, 1)])).unwrap().0, 1);
        assert_eq!(
            maxcut_oracle(&graph(3, &[(0, 1, 1), (0, 2, 1), (1, 2, 1)]))
                .unwrap()
                .0,
            2
        );
        let k4: Vec<_> = (0..4)
            .flat_map(|u| (u + 1..4).map(move |v| (u, v, 1)))
            .collect();
        assert_eq!(maxcut_oracle(&graph(4, &k4)).unwrap().0, 4);
    }

    #[test]
    fn oracle_witness_and_brute_force() {
        for g in gen_graph(GraphFamily::Er { p: 0.5 }, 10, 5, 4).unwrap() {
            let (best, witness) = maxcut_oracle(&g).unwrap();
            assert_eq!(cut_value(&g, &witness).unwrap(), best);
            let brute = (0..1u32 << 10)
                .map(|bits| {
                    let a = CutAssignment::new((0..10).map(|i| ((bits >> i) & 1) as u8).collect());
                    cut_value(&g, &a).unwrap()
                })
                .max()
                .unwrap();
            assert_eq!(best, brute);
        }
    }

    #[test]
    fn oracle_size_limit() {
        let g = &gen_graph(GraphFamily::Er { p: 0.1 }, 23, 1, 0).unwrap()[0];
        assert!(matches!(
            maxcut_oracle(g),
            Err(ProblemError::SizeLimit { .. })
        ));
    }

    #[test]
    fn starts_count_and_determinism() {
        let g = &gen_graph(GraphFamily::Er { p: 0.2 }, 20, 1, 1).unwrap()[0];
        let s = random_cut_solutions(g, DEFAULT_START_COUNT, 1);
        assert_eq!(s.len(), 50);
        assert!(s.iter().all(|a| a.side.len() == 20));
        assert_eq!(s, random_cut_solutions(g, 50, 1));
        let ones: usize = s.iter().flat_map(|a| &a.side).map(|&b| b as usize).sum();
        let frac = ones as f64 / 1000.0;
        assert!((frac - 0.5).abs() < 0.06, "fraction {frac}");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn complement_preserves_cut(seed in 0u64..500, bits in proptest::collection::vec(0u8..2, 14)) {
                let g = &gen_graph(GraphFamily::Er { p: 0.3 }, 14, 1, seed).unwrap()[0];
                let a = CutAssignment::new(bits);
                prop_assert_eq!(cut_value(g, &a).unwrap(), cut_value(g, &a.complement()).unwrap());
            }

            #[test]
            fn oracle_bounds_random_cuts(seed in 0u64..100) {
                let g = &gen_graph(GraphFamily::Ba { m: 2 }, 12, 1, seed).unwrap()[0];
                let (best, _) = maxcut_oracle(g).unwrap();
                for a in random_cut_solutions(g, 20, seed) {
                    prop_assert!(cut_value(g, &a).unwrap() <= best);
                }
            }
        }
    }
}
