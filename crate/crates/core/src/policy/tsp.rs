//! Attention encoder / pointer decoder for Euclidean TSP.
//!
//! The encoder embeds city coordinates and refines them with single-head
//! self-attention blocks (residual attention, then a residual two-layer
//! feed-forward). The decoder builds a tour one city per step: its context
//! is the graph embedding plus the embeddings of the current and first city
//! (a learned placeholder before the first choice), it takes one masked
//! attention glimpse over the cities, and scores every unvisited city with a
//! compatibility logit clipped to `[-10, 10]` by `10 * tanh`.

use rand::Rng as _;

use super::{Params, Policy, PolicyError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::objective::ProblemKind;
use crate::problems::{Tour, TspInstance};
use crate::seeding::Rng;

const LOGIT_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TspDims {
    pub d: usize,
    pub d_ff: usize,
    pub layers: usize,
}

impl Default for TspDims {
    fn default() -> Self {
        Self {
            d: 32,
            d_ff: 64,
            layers: 2,
        }
    }
}

impl TspDims {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d, self.d_ff);
        let mut out = vec![
            ("embed_w".to_string(), vec![2, d]),
            ("embed_b".to_string(), vec![1, d]),
        ];
        for l in 0..self.layers {
            for (name, shape) in [
                ("wq", vec![d, d]),
                ("wk", vec![d, d]),
                ("wv", vec![d, d]),
                ("ff1_w", vec![d, f]),
                ("ff1_b", vec![1, f]),
                ("ff2_w", vec![f, d]),
                ("ff2_b", vec![1, d]),
            ] {
                out.push((format!("enc{l}.{name}"), shape));
            }
        }
        for (name, shape) in [
            ("placeholder", vec![1, 2 * d]),
            ("context_w", vec![3 * d, d]),
            ("glimpse_k", vec![d, d]),
            ("glimpse_v", vec![d, d]),
            ("glimpse_out", vec![d, d]),
            ("pointer_k", vec![d, d]),
        ] {
            out.push((format!("dec.{name}"), shape));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TspPolicyParams {
    dims: TspDims,
    params: Params,
}

impl TspPolicyParams {
    pub fn init(dims: TspDims, rng: &mut Rng) -> Self {
        let params = Params::init(&dims.layout(), &["dec.placeholder"], rng);
        Self { dims, params }
    }

    pub fn dims(&self) -> TspDims {
        self.dims
    }
}

impl Policy for TspPolicyParams {
    const PROBLEM: ProblemKind = ProblemKind::Tsp;

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn from_params(params: Params) -> Result<Self, PolicyError> {
        let layout_err = |m: &str| PolicyError::Layout(m.to_string());
        let d = *params
            .get("embed_w")
            .ok_or_else(|| layout_err("missing embed_w"))?
            .shape()
            .get(1)
            .ok_or_else(|| layout_err("embed_w must be a matrix"))?;
        let d_ff = *params
            .get("enc0.ff1_w")
            .ok_or_else(|| layout_err("missing enc0.ff1_w"))?
            .shape()
            .get(1)
            .ok_or_else(|| layout_err("enc0.ff1_w must be a matrix"))?;
        let layers = params
            .names()
            .iter()
            .filter(|n| n.starts_with("enc") && n.ends_with(".wq"))
            .count();
        let dims = TspDims { d, d_ff, layers };
        params
            .check_layout(&dims.layout())
            .map_err(PolicyError::Layout)?;
        Ok(Self { dims, params })
    }
}

struct LayerVars {
    wq: Var,
    wk: Var,
    wv: Var,
    ff1_w: Var,
    ff1_b: Var,
    ff2_w: Var,
    ff2_b: Var,
}

struct Bound {
    embed_w: Var,
    embed_b: Var,
    layers: Vec<LayerVars>,
    placeholder: Var,
    context_w: Var,
    glimpse_k: Var,
    glimpse_v: Var,
    glimpse_out: Var,
    pointer_k: Var,
}

impl Bound {
    /// Consumes `vars` in layout order.
    fn new(vars: &[Var], layers: usize) -> Self {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("layout length");
        let embed_w = next();
        let embed_b = next();
        let layers = (0..layers)
            .map(|_| LayerVars {
                wq: next(),
                wk: next(),
                wv: next(),
                ff1_w: next(),
                ff1_b: next(),
                ff2_w: next(),
                ff2_b: next(),
            })
            .collect();
        Self {
            embed_w,
            embed_b,
            layers,
            placeholder: next(),
            context_w: next(),
            glimpse_k: next(),
            glimpse_v: next(),
            glimpse_out: next(),
            pointer_k: next(),
        }
    }
}

/// Partial-tour state for incremental decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeState {
    pub visited: Vec<bool>,
    pub current: Option<usize>,
    pub first: Option<usize>,
    pub step: usize,
}

impl DecodeState {
    pub fn new(n: usize) -> Self {
        Self {
            visited: vec![false; n],
            current: None,
            first: None,
            step: 0,
        }
    }

    pub fn visit(&mut self, city: usize) {
        debug_assert!(!self.visited[city]);
        self.visited[city] = true;
        if self.first.is_none() {
            self.first = Some(city);
        }
        self.current = Some(city);
        self.step += 1;
    }

    /// `true` for cities that may still be chosen.
    pub fn mask(&self) -> Vec<bool> {
        self.visited.iter().map(|v| !v).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.step == self.visited.len()
    }
}

/// One instance's encoder pass on a tape, ready for repeated decode steps.
pub struct TspForward {
    tape: Tape,
    vars: Vec<Var>,
    bound: Bound,
    nodes: Var,
    graph: Var,
    glimpse_k: Var,
    glimpse_v: Var,
    pointer_k: Var,
    inv_sqrt_d: f64,
}

impl TspForward {
    pub fn new(inst: &TspInstance, policy: &TspPolicyParams) -> Result<Self, PolicyError> {
        let mut tape = Tape::new();
        let vars = policy.params.bind(&mut tape);
        let bound = Bound::new(&vars, policy.dims.layers);
        let inv_sqrt_d = 1.0 / (policy.dims.d as f64).sqrt();

        let coords = Tensor::new(
            vec![inst.n(), 2],
            inst.coords.iter().flatten().copied().collect(),
        )?;
        let x = tape.constant(coords);
        let e = tape.matmul(x, bound.embed_w)?;
        let mut h = tape.add_row(e, bound.embed_b)?;
        for layer in &bound.layers {
            let q = tape.matmul(h, layer.wq)?;
            let k = tape.matmul(h, layer.wk)?;
            let v = tape.matmul(h, layer.wv)?;
            let scores = tape.matmul_t(q, k)?;
            let scores = tape.scale(scores, inv_sqrt_d);
            let attn = tape.softmax_rows(scores)?;
            let mixed = tape.matmul(attn, v)?;
            h = tape.add(h, mixed)?;
            let f = tape.matmul(h, layer.ff1_w)?;
            let f = tape.add_row(f, layer.ff1_b)?;
            let f = tape.relu(f);
            let f = tape.matmul(f, layer.ff2_w)?;
            let f = tape.add_row(f, layer.ff2_b)?;
            h = tape.add(h, f)?;
        }
        let graph = tape.mean_rows(h)?;
        let glimpse_k = tape.matmul(h, bound.glimpse_k)?;
        let glimpse_v = tape.matmul(h, bound.glimpse_v)?;
        let pointer_k = tape.matmul(h, bound.pointer_k)?;
        Ok(Self {
            tape,
            vars,
            bound,
            nodes: h,
            graph,
            glimpse_k,
            glimpse_v,
            pointer_k,
            inv_sqrt_d,
        })
    }

    pub fn tape(&mut self) -> &mut Tape {
        &mut self.tape
    }

    /// Parameter leaves in layout order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn node_embeddings(&self) -> &Tensor {
        self.tape.value(self.nodes)
    }

    pub fn graph_embedding(&self) -> &Tensor {
        self.tape.value(self.graph)
    }

    /// Appends one decode step and returns the probability node over cities.
    pub fn step(&mut self, state: &DecodeState) -> Result<Var, PolicyError> {
        let mask = state.mask();
        let tape = &mut self.tape;
        let context = match (state.current, state.first) {
            (Some(cur), Some(first)) => {
                let c = tape.row(self.nodes, cur)?;
                let f = tape.row(self.nodes, first)?;
                tape.concat(&[self.graph, c, f])?
            }
            _ => tape.concat(&[self.graph, self.bound.placeholder])?,
        };
        let q = tape.matmul(context, self.bound.context_w)?;
        let u = tape.matmul_t(q, self.glimpse_k)?;
        let u = tape.scale(u, self.inv_sqrt_d);
        let a = tape.masked_softmax(u, &mask)?;
        let glimpse = tape.matmul(a, self.glimpse_v)?;
        let q2 = tape.matmul(glimpse, self.bound.glimpse_out)?;
        let logits = tape.matmul_t(q2, self.pointer_k)?;
        let logits = tape.scale(logits, self.inv_sqrt_d);
        let logits = tape.tanh(logits);
        let logits = tape.scale(logits, LOGIT_CLIP);
        Ok(tape.masked_softmax(logits, &mask)?)
    }

    /// Step probabilities as plain values; the tape is rolled back afterwards.
    pub fn step_probs(&mut self, state: &DecodeState) -> Result<Vec<f64>, PolicyError> {
        let mark = self.tape.len();
        let p = self.step(state)?;
        let out = self.tape.value(p).data().to_vec();
        self.tape.truncate(mark);
        Ok(out)
    }

    pub fn greedy(&mut self, n: usize) -> Result<Tour, PolicyError> {
        let mut state = DecodeState::new(n);
        let mut order = Vec::with_capacity(n);
        while !state.is_complete() {
            let probs = self.step_probs(&state)?;
            let city = argmax_feasible(&probs, &state.visited);
            order.push(city);
            state.visit(city);
        }
        Ok(Tour::new(order))
    }

    /// One stochastic rollout; returns the tour and its total log-probability.
    pub fn sample(&mut self, n: usize, rng: &mut Rng) -> Result<(Tour, f64), PolicyError> {
        let mut state = DecodeState::new(n);
        let mut order = Vec::with_capacity(n);
        let mut logp = 0.0;
        while !state.is_complete() {
            let probs = self.step_probs(&state)?;
            let city = sample_feasible(&probs, &state.visited, rng);
            logp += probs[city].ln();
            order.push(city);
            state.visit(city);
        }
        Ok((Tour::new(order), logp))
    }
}

/// Highest-probability unvisited city, lowest index on ties.
pub fn argmax_feasible(probs: &[f64], visited: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if visited[i] {
            continue;
        }
        match best {
            Some(b) if p <= probs[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("at least one unvisited city")
}

/// Draws an unvisited city from `probs`.
pub fn sample_feasible(probs: &[f64], visited: &[bool], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if visited[i] || p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    // rounding left `acc` just below `u`
    last.unwrap_or_else(|| argmax_feasible(probs, visited))
}

/// Node embeddings (`n x d`) and graph embedding (`1 x d`).
pub fn encode(
    inst: &TspInstance,
    policy: &TspPolicyParams,
) -> Result<(Tensor, Tensor), PolicyError> {
    let fwd = TspForward::new(inst, policy)?;
    Ok((fwd.node_embeddings().clone(), fwd.graph_embedding().clone()))
}

/// Next-city distribution for a partial tour.
pub fn decode_step(
    inst: &TspInstance,
    policy: &TspPolicyParams,
    state: &DecodeState,
) -> Result<Vec<f64>, PolicyError> {
    TspForward::new(inst, policy)?.step_probs(state)
}

pub fn rollout_greedy(inst: &TspInstance, policy: &TspPolicyParams) -> Result<Tour, PolicyError> {
    TspForward::new(inst, policy)?.greedy(inst.n())
}

pub fn rollout_sample(
    inst: &TspInstance,
    policy: &TspPolicyParams,
    rng: &mut Rng,
) -> Result<(Tour, f64), PolicyError> {
    TspForward::new(inst, policy)?.sample(inst.n(), rng)
}

/// Averages the members' step distributions, renormalizes over unvisited
/// cities and acts greedily.
pub fn rollout_average(
    inst: &TspInstance,
    members: &[&TspPolicyParams],
) -> Result<Tour, PolicyError> {
    if members.is_empty() {
        return Err(PolicyError::Invalid("average of zero models".into()));
    }
    let mut forwards = members
        .iter()
        .map(|p| TspForward::new(inst, p))
        .collect::<Result<Vec<_>, _>>()?;
    let n = inst.n();
    let mut state = DecodeState::new(n);
    let mut order = Vec::with_capacity(n);
    while !state.is_complete() {
        let probs = average_step_probs(&mut forwards, &state)?;
        let city = argmax_feasible(&probs, &state.visited);
        order.push(city);
        state.visit(city);
    }
    Ok(Tour::new(order))
}

/// Uniform mixture of the members' step distributions, re-masked and renormalized.
pub fn average_step_probs(
    forwards: &mut [TspForward],
    state: &DecodeState,
) -> Result<Vec<f64>, PolicyError> {
    let n = state.visited.len();
    let mut avg = vec![0.0; n];
    for f in forwards.iter_mut() {
        for (a, p) in avg.iter_mut().zip(f.step_probs(state)?) {
            *a += p;
        }
    }
    for (a, &v) in avg.iter_mut().zip(&state.visited) {
        if v {
            *a = 0.0;
        }
    }
    let total: f64 = avg.iter().sum();
    for a in &mut avg {
        *a /= total;
    }
    Ok(avg)
}
