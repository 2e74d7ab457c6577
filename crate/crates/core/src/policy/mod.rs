//! The two learned solvers: an attention/pointer TSP policy and a
//! message-passing Q-network for MaxCut improvement search.

pub mod maxcut;
mod params;
pub mod tsp;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::objective::ProblemKind;
use crate::problems::ProblemError;

pub use params::Params;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("parameter layout: {0}")]
    Layout(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// A model whose weights live in a [`Params`] store.
pub trait Policy: Clone + Send + Sync + std::fmt::Debug {
    const PROBLEM: ProblemKind;

    fn params(&self) -> &Params;

    fn params_mut(&mut self) -> &mut Params;

    /// Rebuilds a model from stored tensors, inferring its dimensions.
    fn from_params(params: Params) -> Result<Self, PolicyError>;
}
