use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ValueFunction;
use crate::{Coalition, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Accuracy-like metrics.
    HigherIsBetter,
    /// Risk, cost or loss metrics.
    LowerIsBetter,
}

/// Improvement over the no-knowledge baseline:
/// `V(S) = metric(S) - metric(∅)` (or the negation for lower-is-better
/// metrics), with `V(∅) = 0` exactly.
pub struct Improvement<M> {
    metric: M,
    orientation: Orientation,
    baseline: Mutex<Option<f64>>,
}

pub fn improvement_value_function<M>(metric: M, orientation: Orientation) -> Improvement<M>
where
    M: ValueFunction,
{
    Improvement {
        metric,
        orientation,
        baseline: Mutex::new(None),
    }
}

impl<M: ValueFunction> Improvement<M> {
    pub fn metric(&self) -> &M {
        &self.metric
    }

    fn baseline(&self, n_players: usize) -> Result<f64> {
        if let Some(b) = *self.baseline.lock().unwrap() {
            return Ok(b);
        }
        let b = self.metric.evaluate(Coalition::empty(n_players)?)?;
        *self.baseline.lock().unwrap() = Some(b);
        Ok(b)
    }
}

impl<M: ValueFunction> ValueFunction for Improvement<M> {
    fn evaluate(&self, coalition: Coalition) -> Result<f64> {
        if coalition.is_empty() {
            return Ok(0.0);
        }
        let base = self.baseline(coalition.n_players())?;
        let value = self.metric.evaluate(coalition)?;
        Ok(match self.orientation {
            Orientation::HigherIsBetter => value - base,
            Orientation::LowerIsBetter => base - value,
        })
    }
}
