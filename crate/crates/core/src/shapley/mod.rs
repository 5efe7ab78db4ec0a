//! Shapley attribution over knowledge coalitions.
//!
//! Three routes compute the same quantity:
//!
//! - [`exact_shapley`]: weighted average of marginal contributions over all
//!   subsets not containing the player (2^N evaluations).
//! - [`permutation_shapley`]: average marginal contribution over all N!
//!   orderings of the players.
//! - [`mc_shapley`]: the same average estimated from uniformly sampled
//!   orderings, with per-player standard errors.

mod axioms;
mod exact;
mod monte_carlo;
mod permutation;
mod value;

use serde::{Deserialize, Serialize};

use crate::{par, Coalition, PlayerId, Result};

pub use axioms::{
    axiom_report, AxiomReport, Violation, EFFICIENCY_REL_TOL, NULL_PLAYER_TOL, SYMMETRY_TOL,
};
pub use exact::{exact_shapley, exact_shapley_with_cache, shapley_weight};
pub use monte_carlo::{
    mc_shapley, mc_shapley_with_cache, permutation_marginals, sample_permutation, McConfig,
    McDiagnostics, EARLY_STOP_CADENCE,
};
pub use permutation::{
    permutation_shapley, permutation_shapley_with_cache, PERMUTATION_PLAYER_LIMIT,
};
pub use value::{improvement_value_function, Improvement, Orientation};

/// A coalition value function `V`. Implementations must be deterministic:
/// the same coalition always yields the same value.
pub trait ValueFunction: Sync {
    fn evaluate(&self, coalition: Coalition) -> Result<f64>;

    /// Evaluates several coalitions. The default fans out over the worker
    /// pool; implementations with shared per-batch work may override it.
    fn evaluate_many(&self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        par::try_map(coalitions, |c| self.evaluate(*c))
    }
}

impl<F> ValueFunction for F
where
    F: Fn(Coalition) -> Result<f64> + Sync,
{
    fn evaluate(&self, coalition: Coalition) -> Result<f64> {
        self(coalition)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Permutation,
    MonteCarlo,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Permutation => "permutation",
            Method::MonteCarlo => "monte_carlo",
        }
    }
}

/// Per-player Shapley values plus how they were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub phi: Vec<f64>,
    pub method: Method,
    /// Distinct coalitions whose value was consumed.
    pub evaluations_used: usize,
    /// Standard error of each estimate; Monte-Carlo only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<Vec<f64>>,
}

impl Attribution {
    pub fn n_players(&self) -> usize {
        self.phi.len()
    }

    pub fn total(&self) -> f64 {
        self.phi.iter().sum()
    }

    /// Players by decreasing value; ties go to the lower index first.
    pub fn ranking(&self) -> Vec<PlayerId> {
        let mut idx: Vec<usize> = (0..self.phi.len()).collect();
        idx.sort_by(|&a, &b| self.phi[b].total_cmp(&self.phi[a]).then(a.cmp(&b)));
        idx.into_iter().map(PlayerId).collect()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
