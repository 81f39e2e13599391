//! Counterfactual simulation for structural causal models.
//!
//! Samples from counterfactual distributions `p(W_do(X=x) | C = c)` of a
//! fully specified structural causal model. Evidence on continuous variables
//! is handled by solving each row's dedicated error term from the condition,
//! weighting the solutions by the conditional density of the conditioned
//! variable and resampling; evidence on discrete variables is handled by
//! filtering and resampling. Conditions are processed one at a time in
//! topological order, which makes the sampler a particle filter.
//!
//! The crate is `no_std` (with `alloc`). The `parallel` feature enables
//! row-parallel simulation through rayon; results do not depend on it because
//! every random draw comes from a counter-based stream addressed by
//! `(seed, column, row)`.
//!
//! Module map:
//! - [`expr`]: the structural-equation language.
//! - [`scm`]: model building, pruning, interventions, forward simulation.
//! - [`conditioning`]: root finding, weights, resampling, conditional sampling.
//! - [`counterfactual`]: end-to-end counterfactual queries.
//! - [`fairness`]: counterfactual fairness audits of predictors.
//! - [`gaussian`]: exact linear-Gaussian marginals, conditionals and counterfactuals.
//! - [`bench`]: random linear-Gaussian benchmark and its performance measures.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bench;
pub mod conditioning;
pub mod counterfactual;
pub mod dist;
pub mod expr;
pub mod fairness;
pub mod gaussian;
mod par;
pub mod rng;
pub mod scm;
pub mod special;
pub mod stats;

pub use conditioning::{
    Condition, ConditionError, ConditionSet, InfeasibleEvidence, ResampleScheme, RootFindConfig, SamplerConfig,
};
pub use counterfactual::{simulate_counterfactual, summarize, CounterfactualQuery, QueryError, Summary};
pub use dist::Dist;
pub use expr::{Builtin, EvalError, Expr, ParseError};
pub use rng::RngKey;
pub use scm::{
    BackgroundSpec, Intervention, ModelSpec, Monotonicity, ParticleTable, Scm, ScmError, VariableKind, VariableSpec,
};
