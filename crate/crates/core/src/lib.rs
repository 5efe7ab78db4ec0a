//! Shapley attribution of learning-performance improvements to individual
//! pieces of injected domain knowledge.
//!
//! The crate is organised bottom-up:
//!
//! - [`coalition`], [`cache`] and [`table`]: coalitions of knowledge players,
//!   a memoizing evaluation cache and complete/partial value tables.
//! - [`shapley`]: exact subset enumeration, exhaustive permutation averaging,
//!   Monte-Carlo permutation sampling and an axiom checker.
//! - [`knowledge`]: symbolic label knowledge and its semantic losses.
//! - [`trainer`]: a small deterministic MLP trained on labelled data plus
//!   knowledge losses over unlabelled data.
//! - [`testbed`]: synthetic and IDX digit datasets, knowledge truth bits and
//!   the coalition value function built from training runs.
//! - [`fixtures`] and [`reporting`]: embedded accuracy tables and the
//!   command implementations used by the `knowshap` binary.
//!
//! With the default `parallel` feature, coalition evaluation and permutation
//! sampling run on rayon. Results never depend on the worker count.

pub mod cache;
pub mod coalition;
pub mod error;
pub mod fixtures;
pub mod knowledge;
mod par;
pub mod reporting;
pub mod shapley;
pub mod table;
pub mod testbed;
pub mod trainer;

pub use cache::EvaluationCache;
pub use coalition::{Coalition, PlayerId};
pub use error::{Error, Result};
pub use shapley::{
    exact_shapley, mc_shapley, permutation_shapley, Attribution, McConfig, McDiagnostics, Method,
    ValueFunction,
};
pub use table::ValueTable;
