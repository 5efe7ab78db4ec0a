use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Attribution, Method, ValueFunction};
use crate::cache::{Cached, EvaluationCache};
use crate::{par, Coalition, Error, PlayerId, Result};

/// Iterations between checks of the early-stop criterion.
pub const EARLY_STOP_CADENCE: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Number of sampled orderings (with replacement).
    pub max_iter: u64,
    pub seed: u64,
    /// Stop once every player's standard error is at or below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_stderr: Option<f64>,
}

impl McConfig {
    pub fn new(max_iter: u64, seed: u64) -> Self {
        Self {
            max_iter,
            seed,
            target_stderr: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if let Some(t) = self.target_stderr {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!(
                    "target_stderr {t} is not a finite value >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDiagnostics {
    pub iterations_run: u64,
    pub mean: Vec<f64>,
    /// Sample variance (n - 1 denominator) of the per-ordering marginals.
    pub variance: Vec<f64>,
    /// Distinct coalitions evaluated.
    pub evaluations: usize,
    pub stopped_early: bool,
}

/// The ordering drawn for iteration `iteration`. Each iteration has its own
/// generator stream, so the draw does not depend on scheduling.
pub fn sample_permutation(n_players: usize, seed: u64, iteration: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    let mut order: Vec<usize> = (0..n_players).collect();
    order.shuffle(&mut rng);
    order
}

/// Marginal contribution of every player along one ordering:
/// `out[p] = V(pred(p) ∪ {p}) - V(pred(p))`.
pub fn permutation_marginals<V>(vf: &V, n_players: usize, order: &[usize]) -> Result<Vec<f64>>
where
    V: ValueFunction + ?Sized,
{
    let mut out = vec![0.0; n_players];
    let mut prefix = Coalition::empty(n_players)?;
    let mut prev = vf.evaluate(prefix)?;
    for &p in order {
        prefix = prefix.with(PlayerId(p));
        let cur = vf.evaluate(prefix)?;
        out[p] = cur - prev;
        prev = cur;
    }
    Ok(out)
}

/// Monte-Carlo estimate of the Shapley values from `cfg.max_iter` sampled
/// orderings.
pub fn mc_shapley<V>(
    vf: &V,
    n_players: usize,
    cfg: &McConfig,
) -> Result<(Attribution, McDiagnostics)>
where
    V: ValueFunction + ?Sized,
{
    mc_shapley_with_cache(vf, n_players, cfg, &EvaluationCache::new())
}

pub fn mc_shapley_with_cache<V>(
    vf: &V,
    n_players: usize,
    cfg: &McConfig,
    cache: &EvaluationCache,
) -> Result<(Attribution, McDiagnostics)>
where
    V: ValueFunction + ?Sized,
{
    cfg.validate()?;
    Coalition::empty(n_players)?;

    // The run-local layer counts the distinct coalitions this run touched,
    // independent of what the shared cache already holds.
    let shared = Cached::new(vf, cache);
    let local = EvaluationCache::new();
    let game = Cached::new(&shared, &local);

    let mut stats = Welford::new(n_players);
    let mut sums = vec![0.0; n_players];
    let mut stopped_early = false;

    while stats.count < cfg.max_iter {
        let start = stats.count;
        let end = (start + EARLY_STOP_CADENCE).min(cfg.max_iter);
        let chunk = par::try_map_range(start..end, |i| {
            let order = sample_permutation(n_players, cfg.seed, i);
            permutation_marginals(&game, n_players, &order)
        });
        let chunk = match chunk {
            Ok(c) => c,
            Err(source) => {
                return Err(Error::MonteCarloAborted {
                    diagnostics: Box::new(stats.diagnostics(local.len(), false)),
                    source: Box::new(source),
                })
            }
        };
        for marginals in &chunk {
            for (s, m) in sums.iter_mut().zip(marginals) {
                *s += m;
            }
            stats.push(marginals);
        }
        if let Some(target) = cfg.target_stderr {
            if stats.count < cfg.max_iter && stats.max_stderr() <= target {
                stopped_early = true;
                break;
            }
        }
    }

    let iterations = stats.count as f64;
    let phi = sums.iter().map(|s| s / iterations).collect();
    let diagnostics = stats.diagnostics(local.len(), stopped_early);
    let attribution = Attribution {
        phi,
        method: Method::MonteCarlo,
        evaluations_used: local.len(),
        stderr: Some(stats.stderr()),
    };
    Ok((attribution, diagnostics))
}

struct Welford {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(n: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        for ((x, mean), m2) in xs.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = x - *mean;
            *mean += delta / k;
            *m2 += delta * (x - *mean);
        }
    }

    fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let d = (self.count - 1) as f64;
        self.m2.iter().map(|m2| (m2 / d).max(0.0)).collect()
    }

    fn stderr(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.variance()
            .into_iter()
            .map(|v| (v / n).sqrt())
            .collect()
    }

    fn max_stderr(&self) -> f64 {
        self.stderr().into_iter().fold(0.0, f64::max)
    }

    fn diagnostics(&self, evaluations: usize, stopped_early: bool) -> McDiagnostics {
        McDiagnostics {
            iterations_run: self.count,
            mean: self.mean.clone(),
            variance: self.variance(),
            evaluations,
            stopped_early,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::default_player_names;
    use crate::ValueTable;

    fn table(n: usize) -> ValueTable {
        ValueTable::from_fn(n, default_player_names(n), |c| {
            let m = c.mask() as f64;
            (m * 1.3).cos() * 0.2 + c.len() as f64 * 0.05
        })
        .unwrap()
    }

    #[test]
    fn permutation_draw_is_a_permutation() {
        for i in 0..50 {
            let mut p = sample_permutation(7, 99, i);
            p.sort_unstable();
            assert_eq!(p, (0..7).collect::<Vec<_>>());
        }
        assert_eq!(sample_permutation(7, 1, 3), sample_permutation(7, 1, 3));
    }

    #[test]
    fn marginals_telescope() {
        let t = table(5);
        let m = permutation_marginals(&t, 5, &[3, 0, 4, 1, 2]).unwrap();
        let total: f64 = m.iter().sum();
        let expect = t.grand_value().unwrap() - t.empty_value();
        assert!((total - expect).abs() < 1e-12);
    }

    #[test]
    fn null_player_is_exactly_zero() {
        // Player 2 never changes the value.
        let t = ValueTable::from_fn(3, default_player_names(3), |c| {
            let m = c.mask() & 0b011;
            [0.0, 0.11, 0.07, 0.31][m as usize]
        })
        .unwrap();
        let (att, _) = mc_shapley(&t, 3, &McConfig::new(500, 4)).unwrap();
        assert_eq!(att.phi[2], 0.0);
        assert_eq!(att.stderr.as_ref().unwrap()[2], 0.0);
    }

    #[test]
    fn reproducible_from_seed() {
        let t = table(6);
        let cfg = McConfig::new(1000, 17);
        let a = mc_shapley(&t, 6, &cfg).unwrap();
        let b = mc_shapley(&t, 6, &cfg).unwrap();
        assert_eq!(a, b);
        let other = mc_shapley(&t, 6, &McConfig::new(1000, 18)).unwrap();
        assert_ne!(a.0.phi, other.0.phi);
    }

    #[test]
    fn independent_of_worker_count() {
        let t = table(6);
        let cfg = McConfig::new(777, 5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_shapley(&t, 6, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn early_stop_on_cadence() {
        let t = table(4);
        let cfg = McConfig {
            max_iter: 100_000,
            seed: 1,
            target_stderr: Some(0.01),
        };
        let (att, diag) = mc_shapley(&t, 4, &cfg).unwrap();
        assert!(diag.stopped_early);
        assert_eq!(diag.iterations_run % EARLY_STOP_CADENCE, 0);
        assert!(att.stderr.unwrap().iter().all(|&s| s <= 0.01));
    }

    #[test]
    fn rejects_zero_iterations() {
        assert!(mc_shapley(&table(2), 2, &McConfig::new(0, 1)).is_err());
    }

    #[test]
    fn failure_carries_partial_diagnostics() {
        let vf = |c: Coalition| {
            if c.len() == 3 {
                Err(Error::Evaluation {
                    coalition: c.to_string(),
                    reason: "unavailable".into(),
                })
            } else {
                Ok(c.len() as f64)
            }
        };
        match mc_shapley(&vf, 3, &McConfig::new(10, 0)) {
            Err(Error::MonteCarloAborted { diagnostics, .. }) => {
                assert_eq!(diagnostics.iterations_run, 0)
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
