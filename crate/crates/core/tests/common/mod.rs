//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng as _;
use ztop::autodiff::{Tensor, Var};
use ztop::policy::maxcut::{GraphContext, MaxcutDims, MaxcutPolicyParams, QNet};
use ztop::policy::tsp::{DecodeState, TspDims, TspForward, TspPolicyParams};
use ztop::policy::{Params, Policy};
use ztop::problems::{
    gen_graph, gen_tsp, random_cut_solutions, CutAssignment, GraphFamily, GraphInstance,
    TspInstance,
};
use ztop::seeding::{rng_for, Rng};

/// Optimal tour length by enumerating every tour through city 0.
pub fn brute_force_tsp(inst: &TspInstance) -> f64 {
    fn go(inst: &TspInstance, path: &mut Vec<usize>, used: &mut [bool], len: f64, best: &mut f64) {
        let n = inst.n();
        let last = *path.last().unwrap();
        if path.len() == n {
            *best = best.min(len + inst.dist(last, path[0]));
            return;
        }
        for c in 1..n {
            if !used[c] {
                used[c] = true;
                path.push(c);
                go(inst, path, used, len + inst.dist(last, c), best);
                path.pop();
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut used = vec![false; inst.n()];
    used[0] = true;
    go(inst, &mut vec![0], &mut used, 0.0, &mut best);
    best
}

pub const FD_FLOOR: f64 = 1e-5;

/// Central-difference check of `analytic` against `loss` over every scalar
/// parameter. Returns the largest relative error. The denominator is floored
/// at `1e-5`: below that, central differences at `eps = 1e-5` on an O(1) loss
/// carry about 1e-10 of rounding noise, which would otherwise dominate.
pub fn max_fd_rel_error(
    params: &Params,
    analytic: &[Tensor],
    eps: f64,
    loss: impl Fn(&Params) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.data().len() {
            let orig = p.tensors()[t].data()[i];
            p.tensors_mut()[t].data_mut()[i] = orig + eps;
            let up = loss(&p);
            p.tensors_mut()[t].data_mut()[i] = orig - eps;
            let down = loss(&p);
            p.tensors_mut()[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn jitter(params: &mut Params, rng: &mut Rng) {
    // nonzero biases keep pre-activations away from relu kinks
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

/// A randomly sized and randomly weighted TSP policy with a fixed tour to score.
pub struct TspCase {
    pub policy: TspPolicyParams,
    pub inst: TspInstance,
    pub tour: Vec<usize>,
}

pub fn random_tsp_case(seed: u64) -> TspCase {
    let mut rng = rng_for(seed, "fd/tsp");
    let dims = TspDims {
        d: *[4, 6, 8].choose(&mut rng).unwrap(),
        d_ff: *[4, 8, 12].choose(&mut rng).unwrap(),
        layers: rng.gen_range(1..=2),
    };
    let mut policy = TspPolicyParams::init(dims, &mut rng);
    jitter(policy.params_mut(), &mut rng);
    let n = rng.gen_range(4..=7);
    let inst = gen_tsp(n, 1, seed).unwrap().remove(0);
    let mut tour: Vec<usize> = (0..n).collect();
    tour.shuffle(&mut rng);
    TspCase { policy, inst, tour }
}

fn tsp_logp(fwd: &mut TspForward, tour: &[usize]) -> Var {
    let mut state = DecodeState::new(tour.len());
    let mut total: Option<Var> = None;
    for &city in &tour[..tour.len() - 1] {
        let p = fwd.step(&state).unwrap();
        let tape = fwd.tape();
        let pc = tape.pick(p, city).unwrap();
        let lp = tape.log(pc);
        total = Some(match total {
            None => lp,
            Some(acc) => tape.add(acc, lp).unwrap(),
        });
        state.visit(city);
    }
    total.unwrap()
}

/// Log-probability of the case's tour and its gradient per parameter tensor.
pub fn tsp_loss_and_grad(case: &TspCase) -> (f64, Vec<Tensor>) {
    let mut fwd = TspForward::new(&case.inst, &case.policy).unwrap();
    let lp = tsp_logp(&mut fwd, &case.tour);
    let value = fwd.tape().value(lp).data()[0];
    let g = fwd.tape().backward(lp).unwrap();
    let grads = fwd.param_vars().iter().map(|&v| g.wrt(v)).collect();
    (value, grads)
}

pub fn tsp_loss(case: &TspCase, params: &Params) -> f64 {
    let policy = TspPolicyParams::from_params(params.clone()).unwrap();
    let mut fwd = TspForward::new(&case.inst, &policy).unwrap();
    let lp = tsp_logp(&mut fwd, &case.tour);
    fwd.tape().value(lp).data()[0]
}

/// A randomly sized and weighted Q-network, a graph, an assignment and a
/// random readout weighting.
pub struct MaxcutFdCase {
    pub policy: MaxcutPolicyParams,
    pub graph: GraphInstance,
    pub assignment: CutAssignment,
    pub step_frac: f64,
    pub weights: Vec<f64>,
}

pub fn random_maxcut_case(seed: u64) -> MaxcutFdCase {
    let mut rng = rng_for(seed, "fd/maxcut");
    let dims = MaxcutDims {
        d: *[4, 6, 8].choose(&mut rng).unwrap(),
        rounds: rng.gen_range(1..=3),
    };
    let mut policy = MaxcutPolicyParams::init(dims, &mut rng);
    jitter(policy.params_mut(), &mut rng);
    let n = rng.gen_range(4..=9);
    let family = if rng.gen_bool(0.5) {
        GraphFamily::Er { p: 0.5 }
    } else {
        GraphFamily::Ba { m: 2 }
    };
    let graph = gen_graph(family, n, 1, seed).unwrap().remove(0);
    let assignment = random_cut_solutions(&graph, 1, seed).remove(0);
    MaxcutFdCase {
        policy,
        assignment,
        step_frac: rng.gen_range(0.0..1.0),
        weights: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        graph,
    }
}

fn maxcut_objective(net: &mut QNet, case: &MaxcutFdCase) -> Var {
    let ctx = GraphContext::new(&case.graph);
    let q = net.forward(&ctx, &case.assignment, case.step_frac).unwrap();
    let tape = net.tape();
    let shape = tape.value(q).shape().to_vec();
    let w = tape.constant(Tensor::new(shape, case.weights.clone()).unwrap());
    let wq = tape.mul(q, w).unwrap();
    let t = tape.tanh(wq);
    tape.sum(t)
}

/// `sum(tanh(w * Q))` and its gradient per parameter tensor.
pub fn maxcut_loss_and_grad(case: &MaxcutFdCase) -> (f64, Vec<Tensor>) {
    let mut net = QNet::new(&case.policy);
    let out = maxcut_objective(&mut net, case);
    let value = net.tape().value(out).data()[0];
    let g = net.tape().backward(out).unwrap();
    let grads = net.param_vars().iter().map(|&v| g.wrt(v)).collect();
    (value, grads)
}

pub fn maxcut_loss(case: &MaxcutFdCase, params: &Params) -> f64 {
    let policy = MaxcutPolicyParams::from_params(params.clone()).unwrap();
    let mut net = QNet::new(&policy);
    let out = maxcut_objective(&mut net, case);
    net.tape().value(out).data()[0]
}

/// Worst relative error over `count` random networks of each kind.
pub fn gradient_check(count: usize, eps: f64) -> (f64, f64) {
    let mut tsp_worst: f64 = 0.0;
    let mut mc_worst: f64 = 0.0;
    for s in 0..count as u64 {
        let case = random_tsp_case(s);
        let (_, grads) = tsp_loss_and_grad(&case);
        tsp_worst = tsp_worst.max(max_fd_rel_error(case.policy.params(), &grads, eps, |p| {
            tsp_loss(&case, p)
        }));
        let case = random_maxcut_case(s);
        let (_, grads) = maxcut_loss_and_grad(&case);
        mc_worst = mc_worst.max(max_fd_rel_error(case.policy.params(), &grads, eps, |p| {
            maxcut_loss(&case, p)
        }));
    }
    (tsp_worst, mc_worst)
}

/// Tours from every method against Held-Karp, and Held-Karp against
/// enumeration for `n <= 9`; cuts from every method against the exact
/// optimum. Returns a one-line tally or the first violation.
pub fn oracle_consistency(tsp_count: usize, graph_count: usize) -> Result<String, String> {
    use ztop::policy::maxcut::{eval_with_scorer, AveragedQ};
    use ztop::portfolio::{eval_sampling, evaluate_matrix};
    use ztop::problems::{maxcut_oracle, tsp_oracle};
    use ztop::task::{MaxcutCase, MaxcutTask, Task, TspTask};

    // summation order differs between the oracle and the enumeration
    const REL: f64 = 1e-12;
    let mut rng = rng_for(11, "oracle");
    let tsp_models: Vec<TspPolicyParams> = (0..3)
        .map(|_| {
            let dims = TspDims {
                d: 8,
                d_ff: 16,
                layers: 1,
            };
            TspPolicyParams::init(dims, &mut rng)
        })
        .collect();
    let refs: Vec<&TspPolicyParams> = tsp_models.iter().collect();
    let mut enumerated = 0;
    let mut tours = 0;
    for i in 0..tsp_count {
        let n = 4 + i % 10;
        let inst = gen_tsp(n, 1, 1000 + i as u64).unwrap().remove(0);
        let (hk, _) = tsp_oracle(&inst).map_err(|e| e.to_string())?;
        if n <= 9 {
            let brute = brute_force_tsp(&inst);
            if (brute - hk).abs() > REL * brute {
                return Err(format!(
                    "{}: held-karp {hk} vs enumeration {brute}",
                    inst.id
                ));
            }
            enumerated += 1;
        }
        let set = std::slice::from_ref(&inst);
        let m = evaluate_matrix(&TspTask, &refs, set).map_err(|e| e.to_string())?;
        let mut lengths = m.objectives.iter().map(|r| r[0]).collect::<Vec<_>>();
        lengths.push(m.ztop(3).map_err(|e| e.to_string())?.rows[0].objective);
        lengths.push(
            TspTask
                .solve_average(&refs, &inst)
                .map_err(|e| e.to_string())?,
        );
        lengths.push(
            eval_sampling(&TspTask, refs[0], set, 8, i as u64)
                .map_err(|e| e.to_string())?
                .rows[0]
                .objective,
        );
        for len in lengths {
            if len < hk * (1.0 - REL) {
                return Err(format!("{}: tour {len} below optimum {hk}", inst.id));
            }
            tours += 1;
        }
    }

    let mc_models: Vec<MaxcutPolicyParams> = (0..3)
        .map(|_| MaxcutPolicyParams::init(MaxcutDims { d: 8, rounds: 2 }, &mut rng))
        .collect();
    let mc_refs: Vec<&MaxcutPolicyParams> = mc_models.iter().collect();
    let mut cuts = 0;
    for i in 0..graph_count {
        let n = 4 + i % 17;
        let family = if i % 2 == 0 {
            GraphFamily::Er { p: 0.3 }
        } else {
            GraphFamily::Ba { m: 2 }
        };
        let g = gen_graph(family, n, 1, 2000 + i as u64).unwrap().remove(0);
        let (opt, witness) = maxcut_oracle(&g).map_err(|e| e.to_string())?;
        let case = MaxcutCase::prepare(g, 8, i as u64);
        let steps = 2 * n;
        let mut values: Vec<i64> = case
            .starts
            .iter()
            .map(|s| ztop::problems::cut_value(&case.graph, s).unwrap())
            .collect();
        values.push(ztop::problems::cut_value(&case.graph, &witness).unwrap());
        for m in &mc_models {
            values.push(
                eval_with_scorer(
                    &case.ctx,
                    &case.graph,
                    &case.starts,
                    &mut QNet::new(m),
                    steps,
                )
                .map_err(|e| e.to_string())?,
            );
        }
        let mut avg = AveragedQ(mc_models.iter().map(QNet::new).collect());
        values.push(
            eval_with_scorer(&case.ctx, &case.graph, &case.starts, &mut avg, steps)
                .map_err(|e| e.to_string())?,
        );
        if let Some(&bad) = values.iter().find(|&&v| v > opt) {
            return Err(format!("{}: cut {bad} above optimum {opt}", case.graph.id));
        }
        let set = std::slice::from_ref(&case);
        let m =
            evaluate_matrix(&MaxcutTask::default(), &mc_refs, set).map_err(|e| e.to_string())?;
        let ratio = m.ztop(3).map_err(|e| e.to_string())?.rows[0].objective;
        if ratio > 1.0 {
            return Err(format!("{}: ztop ratio {ratio} above 1", case.graph.id));
        }
        cuts += values.len() + 1;
    }
    Ok(format!(
        "{tsp_count} tsp ({enumerated} enumerated, {tours} tours), {graph_count} graphs ({cuts} cuts)"
    ))
}
