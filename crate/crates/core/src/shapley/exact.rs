use super::{Attribution, Method, ValueFunction};
use crate::cache::{Cached, EvaluationCache};
use crate::coalition::{check_exact_limit, enumerate_all};
use crate::{par, Result};

/// Weight of a marginal contribution on a subset of size `subset_len`:
/// `1 / (N * C(N-1, subset_len))`.
pub fn shapley_weight(n_players: usize, subset_len: usize) -> f64 {
    let k = subset_len.min(n_players - 1 - subset_len);
    let mut binom = 1.0f64;
    for i in 0..k {
        binom = binom * (n_players - 1 - i) as f64 / (i + 1) as f64;
    }
    1.0 / (n_players as f64 * binom.round())
}

/// Exact Shapley values by subset enumeration.
pub fn exact_shapley<V>(vf: &V, n_players: usize) -> Result<Attribution>
where
    V: ValueFunction + ?Sized,
{
    exact_shapley_with_cache(vf, n_players, &EvaluationCache::new())
}

pub fn exact_shapley_with_cache<V>(
    vf: &V,
    n_players: usize,
    cache: &EvaluationCache,
) -> Result<Attribution>
where
    V: ValueFunction + ?Sized,
{
    check_exact_limit(n_players)?;
    let coalitions = enumerate_all(n_players)?;
    let values = Cached::new(vf, cache).evaluate_many(&coalitions)?;
    let weights: Vec<f64> = (0..n_players)
        .map(|s| shapley_weight(n_players, s))
        .collect();

    let players: Vec<usize> = (0..n_players).collect();
    let phi = par::map(&players, |&n| {
        let bit = 1usize << n;
        let mut acc = 0.0;
        for mask in (0..values.len()).filter(|m| m & bit == 0) {
            let marginal = values[mask | bit] - values[mask];
            acc += weights[mask.count_ones() as usize] * marginal;
        }
        acc
    });

    Ok(Attribution {
        phi,
        method: Method::Exact,
        evaluations_used: coalitions.len(),
        stderr: None,
    })
}
