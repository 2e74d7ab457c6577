//! Deterministic per-instance evaluation protocols for each problem.
//!
//! Validation and every ensemble mode go through a [`Task`], so the objective
//! used to rank checkpoints is exactly the one reported at test time.

use crate::objective::{Direction, ProblemKind};
use crate::policy::maxcut::{
    approximation_ratio, default_max_steps, eval_with_scorer, AveragedQ, GraphContext,
    MaxcutPolicyParams, QNet,
};
use crate::policy::tsp::{rollout_average, TspForward, TspPolicyParams};
use crate::policy::{Policy, PolicyError};
use crate::problems::{
    maxcut_oracle, random_cut_solutions, tour_length, CutAssignment, GraphInstance, Identified,
    TspInstance, MAXCUT_ORACLE_MAX_N,
};
use crate::seeding::Rng;

pub trait Task: Sync {
    type Instance: Identified + Sync;
    type Model: Policy;

    fn kind(&self) -> ProblemKind;

    fn direction(&self) -> Direction {
        self.kind().direction()
    }

    /// One deterministic pass of one model over one instance.
    fn solve(&self, model: &Self::Model, inst: &Self::Instance) -> Result<f64, PolicyError>;

    /// Uniform averaging of the members' per-step outputs.
    fn solve_average(
        &self,
        models: &[&Self::Model],
        inst: &Self::Instance,
    ) -> Result<f64, PolicyError>;

    /// Best of `samples` stochastic rollouts from one model.
    fn solve_sampling(
        &self,
        _model: &Self::Model,
        _inst: &Self::Instance,
        _samples: usize,
        _rng: &mut Rng,
    ) -> Result<f64, PolicyError> {
        Err(PolicyError::Unsupported(format!(
            "sampling is not defined for {}",
            self.kind()
        )))
    }
}

/// Greedy decoding; objective is tour length.
#[derive(Debug, Clone, Copy, Default)]
pub struct TspTask;

impl Task for TspTask {
    type Instance = TspInstance;
    type Model = TspPolicyParams;

    fn kind(&self) -> ProblemKind {
        ProblemKind::Tsp
    }

    fn solve(&self, model: &TspPolicyParams, inst: &TspInstance) -> Result<f64, PolicyError> {
        let tour = TspForward::new(inst, model)?.greedy(inst.n())?;
        Ok(tour_length(inst, &tour)?)
    }

    fn solve_average(
        &self,
        models: &[&TspPolicyParams],
        inst: &TspInstance,
    ) -> Result<f64, PolicyError> {
        Ok(tour_length(inst, &rollout_average(inst, models)?)?)
    }

    fn solve_sampling(
        &self,
        model: &TspPolicyParams,
        inst: &TspInstance,
        samples: usize,
        rng: &mut Rng,
    ) -> Result<f64, PolicyError> {
        if samples == 0 {
            return Err(PolicyError::Invalid("samples must be at least 1".into()));
        }
        // one encoder pass shared by every sample
        let mut fwd = TspForward::new(inst, model)?;
        let mut best = f64::INFINITY;
        for _ in 0..samples {
            let (tour, _) = fwd.sample(inst.n(), rng)?;
            best = best.min(tour_length(inst, &tour)?);
        }
        Ok(best)
    }
}

/// A graph with its shared start list and, when small enough, its exact optimum.
#[derive(Debug, Clone)]
pub struct MaxcutCase {
    pub graph: GraphInstance,
    pub ctx: GraphContext,
    pub starts: Vec<CutAssignment>,
    pub optimum: Option<i64>,
}

impl MaxcutCase {
    /// Draws `start_count` starts keyed by `seed`; solves the oracle when `n` allows.
    pub fn prepare(graph: GraphInstance, start_count: usize, seed: u64) -> Self {
        let starts = random_cut_solutions(&graph, start_count, seed);
        let optimum = (graph.n <= MAXCUT_ORACLE_MAX_N)
            .then(|| maxcut_oracle(&graph).expect("within oracle limit").0);
        Self {
            ctx: GraphContext::new(&graph),
            graph,
            starts,
            optimum,
        }
    }

    /// Approximation ratio when the optimum is known, raw cut value otherwise.
    pub fn objective(&self, cut: i64) -> f64 {
        match self.optimum {
            Some(opt) => approximation_ratio(cut, opt),
            None => cut as f64,
        }
    }
}

impl Identified for MaxcutCase {
    fn id(&self) -> &str {
        &self.graph.id
    }
}

/// Greedy improvement from every shared start, best cut kept.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxcutTask {
    /// Steps per episode; `2n` when unset.
    pub max_steps: Option<usize>,
}

impl MaxcutTask {
    fn steps(&self, case: &MaxcutCase) -> usize {
        self.max_steps
            .unwrap_or_else(|| default_max_steps(case.graph.n))
    }
}

impl Task for MaxcutTask {
    type Instance = MaxcutCase;
    type Model = MaxcutPolicyParams;

    fn kind(&self) -> ProblemKind {
        ProblemKind::Maxcut
    }

    fn solve(&self, model: &MaxcutPolicyParams, case: &MaxcutCase) -> Result<f64, PolicyError> {
        let cut = eval_with_scorer(
            &case.ctx,
            &case.graph,
            &case.starts,
            &mut QNet::new(model),
            self.steps(case),
        )?;
        Ok(case.objective(cut))
    }

    fn solve_average(
        &self,
        models: &[&MaxcutPolicyParams],
        case: &MaxcutCase,
    ) -> Result<f64, PolicyError> {
        if models.is_empty() {
            return Err(PolicyError::Invalid("average of zero models".into()));
        }
        let mut avg = AveragedQ(models.iter().map(|m| QNet::new(m)).collect());
        let cut = eval_with_scorer(
            &case.ctx,
            &case.graph,
            &case.starts,
            &mut avg,
            self.steps(case),
        )?;
        Ok(case.objective(cut))
    }
}
