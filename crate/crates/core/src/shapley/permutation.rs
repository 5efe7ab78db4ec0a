use super::{Attribution, CompensatedSum, Method, ValueFunction};
use crate::cache::{Cached, EvaluationCache};
use crate::coalition::enumerate_all;
use crate::{par, Error, Result};

/// Largest game for which all N! orderings are enumerated.
pub const PERMUTATION_PLAYER_LIMIT: usize = 10;

/// Shapley values as the average marginal contribution over every ordering
/// of the players.
pub fn permutation_shapley<V>(vf: &V, n_players: usize) -> Result<Attribution>
where
    V: ValueFunction + ?Sized,
{
    permutation_shapley_with_cache(vf, n_players, &EvaluationCache::new())
}

pub fn permutation_shapley_with_cache<V>(
    vf: &V,
    n_players: usize,
    cache: &EvaluationCache,
) -> Result<Attribution>
where
    V: ValueFunction + ?Sized,
{
    if n_players > PERMUTATION_PLAYER_LIMIT {
        return Err(Error::TooManyPlayers {
            n_players,
            limit: PERMUTATION_PLAYER_LIMIT,
            what: "permutation enumeration",
        });
    }
    let coalitions = enumerate_all(n_players)?;
    let values = Cached::new(vf, cache).evaluate_many(&coalitions)?;
    if n_players == 0 {
        return Ok(Attribution {
            phi: Vec::new(),
            method: Method::Permutation,
            evaluations_used: 1,
            stderr: None,
        });
    }

    // Orderings are grouped by their leading player; each group is summed
    // sequentially and the groups are combined in index order.
    let leaders: Vec<usize> = (0..n_players).collect();
    let partials = par::map(&leaders, |&first| {
        let mut sums = vec![CompensatedSum::default(); n_players];
        let mut rest: Vec<usize> = (0..n_players).filter(|&p| p != first).collect();
        loop {
            let mut prefix = 1usize << first;
            sums[first].add(values[prefix] - values[0]);
            for &p in &rest {
                let next = prefix | (1 << p);
                sums[p].add(values[next] - values[prefix]);
                prefix = next;
            }
            if !next_permutation(&mut rest) {
                break;
            }
        }
        sums
    });

    let count: f64 = (1..=n_players).map(|k| k as f64).product();
    let phi = (0..n_players)
        .map(|p| {
            let mut total = CompensatedSum::default();
            for group in &partials {
                total.add(group[p].value());
            }
            total.value() / count
        })
        .collect();
    Ok(Attribution {
        phi,
        method: Method::Permutation,
        evaluations_used: coalitions.len(),
        stderr: None,
    })
}

/// Advances `xs` to the next lexicographic ordering; `false` once the last
/// ordering has been passed.
fn next_permutation(xs: &mut [usize]) -> bool {
    if xs.len() < 2 {
        return false;
    }
    let mut i = xs.len() - 1;
    while i > 0 && xs[i - 1] >= xs[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = xs.len() - 1;
    while xs[j] <= xs[i - 1] {
        j -= 1;
    }
    xs.swap(i - 1, j);
    xs[i..].reverse();
    true
}
