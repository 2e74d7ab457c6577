//! Zero-training-overhead checkpoint portfolios for learned combinatorial solvers.
//!
//! A single training run records every epoch's parameters together with its
//! validation score. At test time the top-k checkpoints are all applied to
//! each instance and the best output is kept. The crate contains everything
//! needed to reproduce that workflow at desk scale on Euclidean TSP and
//! weighted MaxCut: a small reverse-mode autodiff core, two policies, their
//! training loops, the ensemble evaluators and an experiment harness.

pub mod autodiff;
pub mod harness;
pub mod objective;
pub mod policy;
pub mod portfolio;
pub mod problems;
pub mod seeding;
pub mod task;
pub mod training;
