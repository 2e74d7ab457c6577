//! DQN for flip improvement: epsilon-greedy episodes from random cuts,
//! one-step TD targets from a periodically synced target network, uniform
//! experience replay.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{
    accumulate, clip_global_norm, snapshot, zero_grads, CheckpointRegistry, EpochLog, ReplayBuffer,
    TrainConfig, TrainError, TrainOutcome,
};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tensor, Var};
use crate::policy::maxcut::{
    argmax, default_max_steps, step_fraction, GraphContext, MaxcutPolicyParams, QNet,
};
use crate::policy::Policy;
use crate::problems::{cut_value, CutAssignment, GraphInstance};
use crate::seeding::rng_for;
use crate::task::{MaxcutCase, MaxcutTask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnConfig {
    pub replay_capacity: usize,
    pub gamma: f64,
    /// Gradient updates between target-network syncs.
    pub target_sync: usize,
    /// Environment steps per gradient update.
    pub train_every: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Episode length; `2n` when unset.
    pub max_steps: Option<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            replay_capacity: 5000,
            gamma: 0.95,
            target_sync: 50,
            train_every: 4,
            eps_start: 1.0,
            eps_end: 0.05,
            max_steps: None,
        }
    }
}

impl DqnConfig {
    /// Linear decay from `eps_start` to `eps_end` over the first half of training.
    pub fn epsilon(&self, step: usize, total_steps: usize) -> f64 {
        let half = (total_steps as f64 / 2.0).max(1.0);
        let t = (step as f64 / half).min(1.0);
        self.eps_start * (1.0 - t) + self.eps_end * t
    }
}

#[derive(Debug, Clone)]
struct Transition {
    graph: usize,
    state: CutAssignment,
    step: usize,
    action: usize,
    reward: f64,
    done: bool,
}

/// Trains a flip Q-network; validation cases must carry their exact optimum
/// so that every checkpoint is scored by mean approximation ratio.
pub fn train_maxcut(
    cfg: &TrainConfig,
    train: &[GraphInstance],
    val: &[MaxcutCase],
) -> Result<TrainOutcome<MaxcutPolicyParams>, TrainError> {
    cfg.validate()?;
    let dqn = &cfg.dqn;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config(
            "train and validation sets must be nonempty".into(),
        ));
    }
    if let Some(c) = val.iter().find(|c| c.optimum.is_none()) {
        return Err(TrainError::Config(format!(
            "validation graph {} has no exact optimum",
            c.graph.id
        )));
    }
    if dqn.replay_capacity == 0 || dqn.target_sync == 0 || dqn.train_every == 0 {
        return Err(TrainError::Config(
            "replay capacity, target sync and train interval must be positive".into(),
        ));
    }
    if dqn.max_steps == Some(0) {
        return Err(TrainError::Config("episode length must be positive".into()));
    }
    let task = MaxcutTask {
        max_steps: dqn.max_steps,
    };
    let ctxs: Vec<GraphContext> = train.iter().map(GraphContext::new).collect();
    let horizon = |g: &GraphInstance| dqn.max_steps.unwrap_or_else(|| default_max_steps(g.n));
    let total_steps = cfg.epochs * train.iter().map(horizon).sum::<usize>();

    let mut model =
        MaxcutPolicyParams::init(cfg.maxcut_dims, &mut rng_for(cfg.seed, "init/maxcut"));
    let mut rng = rng_for(cfg.seed, "train/maxcut");
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut opt = AdamState::new(model.params().tensors());
    let mut registry = CheckpointRegistry::new(format!("maxcut-{}", cfg.seed), cfg.retention);
    let initial_val_score = snapshot(&task, &model, 0, val)?.val_score;

    let mut online = QNet::new(&model);
    let mut target = QNet::new(&model);
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(dqn.replay_capacity);
    let mut global_step = 0;
    let mut updates = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_total, mut loss_count) = (0.0, 0usize);
        for &gi in &order {
            let (g, ctx) = (&train[gi], &ctxs[gi]);
            let steps = horizon(g);
            let mut state = CutAssignment::new((0..g.n).map(|_| rng.gen_range(0..2u8)).collect());
            let mut value = cut_value(g, &state)?;
            let mut best = value;
            for step in 0..steps {
                let eps = dqn.epsilon(global_step, total_steps);
                let action = if rng.gen::<f64>() < eps {
                    rng.gen_range(0..g.n)
                } else {
                    argmax(&online.qvalues(ctx, &state, step_fraction(step, g.n))?)
                };
                value += ctx.flip_gains(&state)[action];
                let reward = (value - best).max(0) as f64 / g.n as f64;
                best = best.max(value);
                let mut next = state.clone();
                next.flip(action);
                buffer.push(Transition {
                    graph: gi,
                    state: std::mem::replace(&mut state, next),
                    step,
                    action,
                    reward,
                    done: step + 1 == steps,
                });
                global_step += 1;

                if buffer.len() >= cfg.batch_size && global_step % dqn.train_every == 0 {
                    let batch = buffer.sample(cfg.batch_size, &mut rng);
                    let (loss, mut grads) = td_gradients(
                        &mut online,
                        &mut target,
                        &batch,
                        &ctxs,
                        dqn.gamma,
                        model.params().tensors(),
                    )?;
                    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                        return Err(TrainError::Diverged {
                            epoch,
                            detail: format!("TD loss {loss}"),
                        });
                    }
                    loss_total += loss;
                    loss_count += 1;
                    clip_global_norm(&mut grads, cfg.grad_clip);
                    adam_step(model.params_mut().tensors_mut(), &grads, &mut opt, &adam)?;
                    online = QNet::new(&model);
                    updates += 1;
                    if updates % dqn.target_sync == 0 {
                        target = QNet::new(&model);
                    }
                }
            }
        }
        let ckpt = snapshot(&task, &model, epoch, val)?;
        log.push(EpochLog {
            epoch,
            train_loss: if loss_count > 0 {
                loss_total / loss_count as f64
            } else {
                0.0
            },
            val_score: ckpt.val_score,
        });
        registry.push(ckpt)?;
    }
    Ok(TrainOutcome {
        registry,
        log,
        initial_val_score,
    })
}

/// Mean squared TD error over `batch` and its gradient for the online net.
fn td_gradients(
    online: &mut QNet,
    target: &mut QNet,
    batch: &[&Transition],
    ctxs: &[GraphContext],
    gamma: f64,
    params: &[Tensor],
) -> Result<(f64, Vec<Tensor>), TrainError> {
    online.reset();
    let mut total: Option<Var> = None;
    for t in batch {
        let ctx = &ctxs[t.graph];
        let y = if t.done {
            t.reward
        } else {
            let mut next = t.state.clone();
            next.flip(t.action);
            let q = target.qvalues(ctx, &next, step_fraction(t.step + 1, ctx.n))?;
            t.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let q = online.forward(ctx, &t.state, step_fraction(t.step, ctx.n))?;
        let tape = online.tape();
        let qa = tape.pick(q, t.action)?;
        let y = tape.constant(Tensor::scalar(y));
        let d = tape.sub(qa, y)?;
        let sq = tape.mul(d, d)?;
        total = Some(match total {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    let total = total.ok_or_else(|| TrainError::Config("empty replay batch".into()))?;
    let tape = online.tape();
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    let value = tape.value(loss).data()[0];
    let g = tape.backward(loss)?;
    let mut grads = zero_grads(params);
    accumulate(&mut grads, &g, online.param_vars());
    online.reset();
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::maxcut::MaxcutDims;
    use crate::problems::{gen_graph, GraphFamily};

    fn cases(n: usize, count: usize, seed: u64) -> Vec<MaxcutCase> {
        gen_graph(GraphFamily::Er { p: 0.3 }, n, count, seed)
            .unwrap()
            .into_iter()
            .map(|g| MaxcutCase::prepare(g, 5, seed))
            .collect()
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            seed: 3,
            maxcut_dims: MaxcutDims { d: 8, rounds: 1 },
            dqn: DqnConfig {
                replay_capacity: 64,
                target_sync: 5,
                ..DqnConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let d = DqnConfig::default();
        assert_eq!(d.epsilon(0, 100), 1.0);
        assert!((d.epsilon(25, 100) - 0.525).abs() < 1e-12);
        assert_eq!(d.epsilon(50, 100), 0.05);
        assert_eq!(d.epsilon(99, 100), 0.05);
    }

    #[test]
    fn ratios_in_unit_interval_and_reproducible() {
        let train = gen_graph(GraphFamily::Er { p: 0.3 }, 8, 6, 1).unwrap();
        let val = cases(8, 4, 2);
        let a = train_maxcut(&small_cfg(3), &train, &val).unwrap();
        let b = train_maxcut(&small_cfg(3), &train, &val).unwrap();
        assert_eq!(a.registry.len(), 3);
        for (x, y) in a.registry.entries().iter().zip(b.registry.entries()) {
            assert_eq!(x, y);
            assert!(x.val_score > 0.0 && x.val_score <= 1.0, "{}", x.val_score);
            assert!(
                x.per_instance.values().all(|r| *r <= 1.0),
                "{:?}",
                x.per_instance
            );
        }
    }

    #[test]
    fn validation_needs_optimum() {
        let train = gen_graph(GraphFamily::Er { p: 0.3 }, 8, 2, 1).unwrap();
        let mut val = cases(8, 2, 2);
        val[1].optimum = None;
        assert!(matches!(
            train_maxcut(&small_cfg(1), &train, &val),
            Err(TrainError::Config(_))
        ));
    }
}
