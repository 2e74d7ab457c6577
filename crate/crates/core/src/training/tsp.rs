//! REINFORCE with a greedy-rollout baseline from the current parameters.

use rand::seq::SliceRandom;

use super::{
    accumulate, clip_global_norm, snapshot, zero_grads, CheckpointRegistry, EpochLog, TrainConfig,
    TrainError, TrainOutcome,
};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tensor, Var};
use crate::policy::tsp::{sample_feasible, DecodeState, TspForward, TspPolicyParams};
use crate::policy::Policy;
use crate::problems::{tour_length, Tour, TspInstance};
use crate::seeding::{rng_for, Rng};
use crate::task::TspTask;

/// Trains for `cfg.epochs` passes over `train`, publishing a checkpoint after
/// every epoch. Epochs are numbered from 1; the untrained policy's validation
/// score is reported separately in the outcome.
pub fn train_tsp(
    cfg: &TrainConfig,
    train: &[TspInstance],
    val: &[TspInstance],
) -> Result<TrainOutcome<TspPolicyParams>, TrainError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config(
            "train and validation sets must be nonempty".into(),
        ));
    }
    let mut model = TspPolicyParams::init(cfg.tsp_dims, &mut rng_for(cfg.seed, "init/tsp"));
    let mut rng = rng_for(cfg.seed, "train/tsp");
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut opt = AdamState::new(model.params().tensors());
    let mut registry = CheckpointRegistry::new(format!("tsp-{}", cfg.seed), cfg.retention);
    let initial_val_score = snapshot(&TspTask, &model, 0, val)?.val_score;

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zero_grads(model.params().tensors());
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                loss_total += reinforce_instance(&model, &train[i], scale, &mut rng, &mut grads)?;
            }
            if !loss_total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged {
                    epoch,
                    detail: format!("loss {loss_total}"),
                });
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            adam_step(model.params_mut().tensors_mut(), &grads, &mut opt, &adam)?;
        }
        let ckpt = snapshot(&TspTask, &model, epoch, val)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_total / order.chunks(cfg.batch_size).len() as f64,
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

/// Adds `scale * (L_sample - L_greedy) * grad log p(sample)` into `grads` and
/// returns the scaled surrogate loss.
fn reinforce_instance(
    model: &TspPolicyParams,
    inst: &TspInstance,
    scale: f64,
    rng: &mut Rng,
    grads: &mut [Tensor],
) -> Result<f64, TrainError> {
    let n = inst.n();
    let mut fwd = TspForward::new(inst, model)?;
    let baseline = tour_length(inst, &fwd.greedy(n)?)?;

    let mut state = DecodeState::new(n);
    let mut order = Vec::with_capacity(n);
    let mut logp: Option<Var> = None;
    // the final city is forced and contributes log 1 = 0
    while state.step + 1 < n {
        let p = fwd.step(&state)?;
        let city = sample_feasible(fwd.tape().value(p).data(), &state.visited, rng);
        let tape = fwd.tape();
        let pc = tape.pick(p, city)?;
        let lp = tape.log(pc);
        logp = Some(match logp {
            None => lp,
            Some(acc) => tape.add(acc, lp)?,
        });
        order.push(city);
        state.visit(city);
    }
    let last = state
        .visited
        .iter()
        .position(|v| !v)
        .expect("one city left");
    order.push(last);
    let advantage = tour_length(inst, &Tour::new(order))? - baseline;
    let logp = logp.expect("n >= 3");
    let loss = advantage * fwd.tape().value(logp).data()[0] * scale;
    if advantage != 0.0 {
        let tape = fwd.tape();
        let surrogate = tape.scale(logp, advantage * scale);
        let g = tape.backward(surrogate)?;
        accumulate(grads, &g, fwd.param_vars());
    }
    Ok(loss)
}
