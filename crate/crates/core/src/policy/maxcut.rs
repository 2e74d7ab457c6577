//! Message-passing Q-network over signed graphs and the flip-improvement episode.
//!
//! Each vertex starts from four observations (its side bit, its weighted
//! degree, the immediate cut gain of flipping it, and the fraction of the
//! episode elapsed). Every round aggregates neighbor embeddings weighted by
//! the signed edge weight. The readout mixes each vertex embedding with the
//! mean embedding and emits one Q-value per vertex flip.

use rand::Rng as _;

use super::{Params, Policy, PolicyError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::objective::ProblemKind;
use crate::problems::{cut_value, CutAssignment, GraphInstance, ProblemError};
use crate::seeding::Rng;

pub const FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxcutDims {
    pub d: usize,
    pub rounds: usize,
}

impl Default for MaxcutDims {
    fn default() -> Self {
        Self { d: 16, rounds: 2 }
    }
}

impl MaxcutDims {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d;
        let mut out = vec![
            ("in_w".to_string(), vec![FEATURES, d]),
            ("in_b".to_string(), vec![1, d]),
        ];
        for r in 0..self.rounds {
            out.push((format!("mp{r}.msg_w"), vec![d, d]));
            out.push((format!("mp{r}.self_w"), vec![d, d]));
            out.push((format!("mp{r}.b"), vec![1, d]));
        }
        out.push(("readout.local_w".into(), vec![d, d]));
        out.push(("readout.global_w".into(), vec![d, d]));
        out.push(("readout.b".into(), vec![1, d]));
        out.push(("readout.out_w".into(), vec![d, 1]));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxcutPolicyParams {
    dims: MaxcutDims,
    params: Params,
}

impl MaxcutPolicyParams {
    pub fn init(dims: MaxcutDims, rng: &mut Rng) -> Self {
        Self {
            dims,
            params: Params::init(&dims.layout(), &[], rng),
        }
    }

    pub fn dims(&self) -> MaxcutDims {
        self.dims
    }
}

impl Policy for MaxcutPolicyParams {
    const PROBLEM: ProblemKind = ProblemKind::Maxcut;

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn from_params(params: Params) -> Result<Self, PolicyError> {
        let d = *params
            .get("in_w")
            .and_then(|t| t.shape().get(1))
            .ok_or_else(|| PolicyError::Layout("missing in_w matrix".into()))?;
        let rounds = params
            .names()
            .iter()
            .filter(|n| n.starts_with("mp") && n.ends_with(".msg_w"))
            .count();
        let dims = MaxcutDims { d, rounds };
        params
            .check_layout(&dims.layout())
            .map_err(PolicyError::Layout)?;
        Ok(Self { dims, params })
    }
}

/// Per-graph data reused across every forward pass on that graph.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub n: usize,
    adjacency: Vec<Vec<(usize, i64)>>,
    /// dense signed adjacency, `n x n`
    weights: Tensor,
    weighted_degree: Vec<f64>,
}

impl GraphContext {
    pub fn new(g: &GraphInstance) -> Self {
        let adjacency = g.adjacency();
        let mut dense = vec![0.0; g.n * g.n];
        for e in &g.edges {
            dense[e.u * g.n + e.v] = e.w as f64;
            dense[e.v * g.n + e.u] = e.w as f64;
        }
        let weighted_degree = adjacency
            .iter()
            .map(|l| l.iter().map(|&(_, w)| w as f64).sum())
            .collect();
        Self {
            n: g.n,
            adjacency,
            weights: Tensor::new(vec![g.n, g.n], dense).expect("n x n"),
            weighted_degree,
        }
    }

    /// Change in cut value from flipping each vertex.
    pub fn flip_gains(&self, a: &CutAssignment) -> Vec<i64> {
        self.adjacency
            .iter()
            .enumerate()
            .map(|(v, list)| {
                list.iter()
                    .map(|&(u, w)| if a.side[u] == a.side[v] { w } else { -w })
                    .sum()
            })
            .collect()
    }

    pub fn features(&self, a: &CutAssignment, step_frac: f64) -> Tensor {
        let gains = self.flip_gains(a);
        let mut data = Vec::with_capacity(self.n * FEATURES);
        for v in 0..self.n {
            data.extend([
                f64::from(a.side[v]),
                self.weighted_degree[v],
                gains[v] as f64,
                step_frac,
            ]);
        }
        Tensor::new(vec![self.n, FEATURES], data).expect("n x 4")
    }
}

struct Bound {
    in_w: Var,
    in_b: Var,
    rounds: Vec<(Var, Var, Var)>,
    local_w: Var,
    global_w: Var,
    readout_b: Var,
    out_w: Var,
}

/// A bound Q-network. Parameters are recorded once; every forward pass is
/// appended after them and may be rolled back.
pub struct QNet {
    tape: Tape,
    vars: Vec<Var>,
    bound: Bound,
}

impl QNet {
    pub fn new(policy: &MaxcutPolicyParams) -> Self {
        let mut tape = Tape::new();
        let vars = policy.params.bind(&mut tape);
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("layout length");
        let in_w = next();
        let in_b = next();
        let rounds = (0..policy.dims.rounds)
            .map(|_| (next(), next(), next()))
            .collect();
        let bound = Bound {
            in_w,
            in_b,
            rounds,
            local_w: next(),
            global_w: next(),
            readout_b: next(),
            out_w: next(),
        };
        Self { tape, vars, bound }
    }

    pub fn tape(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    /// Drops everything recorded after the parameters.
    pub fn reset(&mut self) {
        self.tape.truncate(self.vars.len());
    }

    /// Appends a forward pass and returns the `n x 1` Q-value node.
    pub fn forward(
        &mut self,
        ctx: &GraphContext,
        a: &CutAssignment,
        step_frac: f64,
    ) -> Result<Var, PolicyError> {
        if a.side.len() != ctx.n {
            return Err(ProblemError::Shape(format!(
                "assignment of length {} for {} vertices",
                a.side.len(),
                ctx.n
            ))
            .into());
        }
        let b = &self.bound;
        let tape = &mut self.tape;
        let x = tape.constant(ctx.features(a, step_frac));
        let adj = tape.constant(ctx.weights.clone());
        let h0 = tape.matmul(x, b.in_w)?;
        let h0 = tape.add_row(h0, b.in_b)?;
        let mut h = tape.relu(h0);
        for &(msg_w, self_w, bias) in &b.rounds {
            let agg = tape.matmul(adj, h)?;
            let m = tape.matmul(agg, msg_w)?;
            let s = tape.matmul(h, self_w)?;
            let z = tape.add(m, s)?;
            let z = tape.add_row(z, bias)?;
            h = tape.relu(z);
        }
        let pooled = tape.mean_rows(h)?;
        let g = tape.matmul(pooled, b.global_w)?;
        let l = tape.matmul(h, b.local_w)?;
        let z = tape.add_row(l, g)?;
        let z = tape.add_row(z, b.readout_b)?;
        let z = tape.relu(z);
        Ok(tape.matmul(z, b.out_w)?)
    }

    pub fn qvalues(
        &mut self,
        ctx: &GraphContext,
        a: &CutAssignment,
        step_frac: f64,
    ) -> Result<Vec<f64>, PolicyError> {
        let mark = self.tape.len();
        let q = self.forward(ctx, a, step_frac)?;
        let out = self.tape.value(q).data().to_vec();
        self.tape.truncate(mark);
        Ok(out)
    }
}

pub fn mpnn_qvalues(
    g: &GraphInstance,
    a: &CutAssignment,
    step_frac: f64,
    policy: &MaxcutPolicyParams,
) -> Result<Vec<f64>, PolicyError> {
    QNet::new(policy).qvalues(&GraphContext::new(g), a, step_frac)
}

/// Source of per-vertex flip scores; the episode flips the highest one.
pub trait FlipScorer {
    fn scores(
        &mut self,
        ctx: &GraphContext,
        a: &CutAssignment,
        step_frac: f64,
    ) -> Result<Vec<f64>, PolicyError>;
}

impl FlipScorer for QNet {
    fn scores(
        &mut self,
        ctx: &GraphContext,
        a: &CutAssignment,
        step_frac: f64,
    ) -> Result<Vec<f64>, PolicyError> {
        self.qvalues(ctx, a, step_frac)
    }
}

/// Uniform average of several networks' Q-vectors.
pub struct AveragedQ(pub Vec<QNet>);

impl FlipScorer for AveragedQ {
    fn scores(
        &mut self,
        ctx: &GraphContext,
        a: &CutAssignment,
        step_frac: f64,
    ) -> Result<Vec<f64>, PolicyError> {
        let k = self.0.len() as f64;
        let mut avg = vec![0.0; ctx.n];
        for net in &mut self.0 {
            for (s, q) in avg.iter_mut().zip(net.qvalues(ctx, a, step_frac)?) {
                *s += q;
            }
        }
        for s in &mut avg {
            *s /= k;
        }
        Ok(avg)
    }
}

pub enum EpisodeMode<'r> {
    Greedy,
    Epsilon { eps: f64, rng: &'r mut Rng },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeResult {
    pub best_assignment: CutAssignment,
    pub best_value: i64,
    pub trajectory_length: usize,
}

/// Elapsed-time feature: steps over the default `2n` horizon, capped at 1.
/// It does not depend on the step budget, so a shorter greedy episode is a
/// prefix of a longer one.
pub fn step_fraction(step: usize, n: usize) -> f64 {
    (step as f64 / (2 * n) as f64).min(1.0)
}

/// Default episode length.
pub fn default_max_steps(n: usize) -> usize {
    2 * n
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Flips one vertex per step for `max_steps` steps, tracking the best cut
/// seen (the start included). Flips may undo earlier ones.
pub fn run_episode<S: FlipScorer + ?Sized>(
    ctx: &GraphContext,
    g: &GraphInstance,
    start: &CutAssignment,
    scorer: &mut S,
    max_steps: usize,
    mut mode: EpisodeMode<'_>,
) -> Result<EpisodeResult, PolicyError> {
    if max_steps == 0 {
        return Err(PolicyError::Invalid("max_steps must be at least 1".into()));
    }
    let mut current = start.clone();
    let mut value = cut_value(g, &current)?;
    let mut best = EpisodeResult {
        best_assignment: current.clone(),
        best_value: value,
        trajectory_length: 0,
    };
    for step in 0..max_steps {
        let explore = match &mut mode {
            EpisodeMode::Epsilon { eps, rng } => {
                (rng.gen::<f64>() < *eps).then(|| rng.gen_range(0..ctx.n))
            }
            EpisodeMode::Greedy => None,
        };
        let action = match explore {
            Some(v) => v,
            None => argmax(&scorer.scores(ctx, &current, step_fraction(step, ctx.n))?),
        };
        value += ctx.flip_gains(&current)[action];
        current.flip(action);
        best.trajectory_length = step + 1;
        if value > best.best_value {
            best.best_value = value;
            best.best_assignment = current.clone();
        }
    }
    Ok(best)
}

pub fn improve_episode(
    g: &GraphInstance,
    start: &CutAssignment,
    policy: &MaxcutPolicyParams,
    max_steps: usize,
    mode: EpisodeMode<'_>,
) -> Result<EpisodeResult, PolicyError> {
    let ctx = GraphContext::new(g);
    run_episode(&ctx, g, start, &mut QNet::new(policy), max_steps, mode)
}

/// Best greedy-episode cut over a shared list of starts.
pub fn eval_with_scorer<S: FlipScorer + ?Sized>(
    ctx: &GraphContext,
    g: &GraphInstance,
    starts: &[CutAssignment],
    scorer: &mut S,
    max_steps: usize,
) -> Result<i64, PolicyError> {
    if starts.is_empty() {
        return Err(PolicyError::Invalid("no start assignments".into()));
    }
    let mut best = i64::MIN;
    for s in starts {
        best = best.max(run_episode(ctx, g, s, scorer, max_steps, EpisodeMode::Greedy)?.best_value);
    }
    Ok(best)
}

pub fn eval_maxcut_model(
    g: &GraphInstance,
    starts: &[CutAssignment],
    policy: &MaxcutPolicyParams,
    max_steps: usize,
) -> Result<i64, PolicyError> {
    let ctx = GraphContext::new(g);
    eval_with_scorer(&ctx, g, starts, &mut QNet::new(policy), max_steps)
}

/// Achieved cut over the exact optimum. When the optimum is not positive the
/// ratio is 1 for matching it and 0 otherwise.
pub fn approximation_ratio(cut: i64, optimum: i64) -> f64 {
    if optimum > 0 {
        cut as f64 / optimum as f64
    } else if cut >= optimum {
        1.0
    } else {
        0.0
    }
}
