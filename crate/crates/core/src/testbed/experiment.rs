use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::{
    attach_knowledge_truth, digits, generate_blobs, DigitSource, FlippedBits, SyntheticSpec,
};
use crate::knowledge::KnowledgeSpec;
use crate::shapley::{McConfig, ValueFunction};
use crate::trainer::{train, Dataset, TrainConfig};
use crate::{par, Coalition, Error, Result};

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Digits(DigitSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AttributionSpec {
    Exact,
    Permutation,
    MonteCarlo(McConfig),
}

/// One end-to-end attribution experiment, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub dataset: DatasetSource,
    pub knowledge: Vec<KnowledgeSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    pub attribution: AttributionSpec,
    /// Each coalition is trained once per seed; values are seed averages.
    pub repetition_seeds: Vec<u64>,
}

/// One-hot, "class in {0,1}" and "class in {0,1,2}": a nested pair of
/// constraints next to the exactly-one rule.
pub fn default_knowledge() -> Vec<KnowledgeSpec> {
    vec![
        KnowledgeSpec::one_hot("OneHot"),
        KnowledgeSpec::subset("C-I", vec![0, 1]),
        KnowledgeSpec::subset("C-II", vec![0, 1, 2]),
    ]
}

impl ExperimentSpec {
    /// The default synthetic task with five repetition seeds derived from
    /// `seed`.
    pub fn default_synthetic(seed: u64) -> Self {
        Self {
            schema_version: EXPERIMENT_SCHEMA_VERSION,
            dataset: DatasetSource::Synthetic(SyntheticSpec::default_task(seed)),
            knowledge: default_knowledge(),
            train: TrainConfig::default(),
            attribution: AttributionSpec::Exact,
            repetition_seeds: (0..5)
                .map(|i| seed.wrapping_mul(1000).wrapping_add(i))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}, expected {EXPERIMENT_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.knowledge.is_empty() {
            return Err(Error::Config(
                "experiment needs at least one knowledge item".into(),
            ));
        }
        let mut names = HashSet::new();
        if let Some(k) = self
            .knowledge
            .iter()
            .find(|k| !names.insert(k.name.as_str()))
        {
            return Err(Error::Config(format!(
                "duplicate knowledge name {:?}",
                k.name
            )));
        }
        if self.repetition_seeds.is_empty() {
            return Err(Error::Config("repetition_seeds is empty".into()));
        }
        if let AttributionSpec::MonteCarlo(mc) = &self.attribution {
            mc.validate()?;
        }
        self.train.validate()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn player_names(&self) -> Vec<String> {
        self.knowledge.iter().map(|k| k.name.clone()).collect()
    }
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub accuracy: f64,
    pub steps: usize,
    pub final_loss: f64,
}

/// Every seed's run for one coalition; failed runs carry their message.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionOutcome {
    pub coalition: Coalition,
    pub runs: Vec<std::result::Result<RunRecord, String>>,
}

impl CoalitionOutcome {
    pub fn mean_accuracy(&self) -> Option<f64> {
        let mut sum = 0.0;
        for r in &self.runs {
            sum += r.as_ref().ok()?.accuracy;
        }
        Some(sum / self.runs.len() as f64)
    }

    pub fn error(&self) -> Option<&str> {
        self.runs
            .iter()
            .find_map(|r| r.as_ref().err().map(String::as_str))
    }
}

type Slot = Arc<OnceLock<std::result::Result<RunRecord, String>>>;

/// V(S) = mean over seeds of accuracy(S) - accuracy(empty). Every
/// (coalition, seed) pair is trained at most once, even under concurrent
/// evaluation.
pub struct KnowledgeValueFunction {
    dataset: Dataset,
    config: TrainConfig,
    seeds: Vec<u64>,
    flipped: FlippedBits,
    empty: Coalition,
    runs: Mutex<HashMap<(u64, u64), Slot>>,
}

impl KnowledgeValueFunction {
    pub fn new(dataset: Dataset, config: TrainConfig, seeds: Vec<u64>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Config("repetition_seeds is empty".into()));
        }
        config.validate()?;
        dataset.validate()?;
        let flipped = vec![Vec::new(); dataset.knowledge.len()];
        let empty = Coalition::empty(dataset.knowledge.len())?;
        Ok(Self {
            empty,
            dataset,
            config,
            seeds,
            flipped,
            runs: Mutex::new(HashMap::new()),
        })
    }

    pub fn n_players(&self) -> usize {
        self.dataset.knowledge.len()
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Corrupted truth-bit positions per knowledge item.
    pub fn flipped(&self) -> &FlippedBits {
        &self.flipped
    }

    /// Number of distinct coalitions trained so far.
    pub fn coalitions_trained(&self) -> usize {
        let runs = self.runs.lock().unwrap();
        runs.keys()
            .map(|(mask, _)| *mask)
            .collect::<HashSet<_>>()
            .len()
    }

    /// Coalitions with at least one training run, in mask order.
    pub fn trained_coalitions(&self) -> Vec<Coalition> {
        let runs = self.runs.lock().unwrap();
        let masks: std::collections::BTreeSet<u64> = runs.keys().map(|(m, _)| *m).collect();
        masks
            .into_iter()
            .filter_map(|m| Coalition::from_mask(m, self.n_players()).ok())
            .collect()
    }

    /// Number of individual training runs so far.
    pub fn runs_completed(&self) -> usize {
        self.runs.lock().unwrap().len()
    }

    fn run(&self, coalition: Coalition, seed: u64) -> std::result::Result<RunRecord, String> {
        let slot = {
            let mut runs = self.runs.lock().unwrap();
            Arc::clone(runs.entry((coalition.mask(), seed)).or_default())
        };
        slot.get_or_init(|| {
            let config = self.config.clone().with_seed(seed);
            match train(&self.dataset, &coalition, &config) {
                Ok((_, m)) => {
                    log::debug!(
                        "trained {coalition} seed {seed}: accuracy {}",
                        m.test_accuracy
                    );
                    Ok(RunRecord {
                        seed,
                        accuracy: m.test_accuracy,
                        steps: m.steps,
                        final_loss: m.loss_trace.last().copied().unwrap_or(f64::NAN),
                    })
                }
                Err(e) => {
                    log::warn!("training {coalition} with seed {seed} failed: {e}");
                    Err(e.to_string())
                }
            }
        })
        .clone()
    }

    /// Trains every (coalition, seed) pair not yet trained, in parallel.
    fn warm(&self, coalitions: &[Coalition]) {
        let mut jobs = Vec::new();
        let mut seen = HashSet::new();
        for &c in std::iter::once(&self.empty).chain(coalitions) {
            if seen.insert(c.mask()) {
                jobs.extend(self.seeds.iter().map(|&s| (c, s)));
            }
        }
        par::map(&jobs, |&(c, s)| {
            let _ = self.run(c, s);
        });
    }

    /// Trains `coalitions` (and the empty coalition) and reports every run,
    /// failures included.
    pub fn outcomes(&self, coalitions: &[Coalition]) -> Vec<CoalitionOutcome> {
        self.warm(coalitions);
        coalitions
            .iter()
            .map(|&c| CoalitionOutcome {
                coalition: c,
                runs: self.seeds.iter().map(|&s| self.run(c, s)).collect(),
            })
            .collect()
    }

    fn check(&self, coalition: Coalition) -> Result<()> {
        if coalition.n_players() != self.n_players() {
            return Err(Error::PlayerCountMismatch {
                expected: self.n_players(),
                found: coalition.n_players(),
            });
        }
        Ok(())
    }

    fn value(&self, coalition: Coalition) -> Result<f64> {
        if coalition.is_empty() {
            return Ok(0.0);
        }
        let empty = self.empty;
        let mut sum = 0.0;
        for &seed in &self.seeds {
            let fail = |reason: String, c: Coalition| Error::Evaluation {
                coalition: c.to_string(),
                reason,
            };
            let a = self.run(coalition, seed).map_err(|r| fail(r, coalition))?;
            let b = self.run(empty, seed).map_err(|r| fail(r, empty))?;
            sum += a.accuracy - b.accuracy;
        }
        Ok(sum / self.seeds.len() as f64)
    }
}

impl ValueFunction for KnowledgeValueFunction {
    fn evaluate(&self, coalition: Coalition) -> Result<f64> {
        self.check(coalition)?;
        self.value(coalition)
    }

    fn evaluate_many(&self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        for &c in coalitions {
            self.check(c)?;
        }
        self.warm(coalitions);
        coalitions.iter().map(|&c| self.value(c)).collect()
    }
}

/// Loads or draws the dataset, attaches knowledge truth bits and wraps the
/// result as a coalition value function.
pub fn build_value_function(spec: &ExperimentSpec) -> Result<KnowledgeValueFunction> {
    spec.validate()?;
    let raw = match &spec.dataset {
        DatasetSource::Synthetic(s) => generate_blobs(s)?,
        DatasetSource::Digits(d) => digits::load_digit_source(d)?,
    };
    let (dataset, flipped) = attach_knowledge_truth(&raw, &spec.knowledge)?;
    let mut vf =
        KnowledgeValueFunction::new(dataset, spec.train.clone(), spec.repetition_seeds.clone())?;
    vf.flipped = flipped;
    Ok(vf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_shapley;

    fn quick_spec() -> ExperimentSpec {
        let mut spec = ExperimentSpec::default_synthetic(7);
        if let DatasetSource::Synthetic(s) = &mut spec.dataset {
            s.n_unlabeled = 64;
            s.n_test = 64;
        }
        spec.train.epochs = 1;
        spec.train.tuning.clear();
        spec.train.hidden = vec![8];
        spec.repetition_seeds = vec![1, 2];
        spec
    }

    #[test]
    fn empty_coalition_is_zero() {
        let vf = build_value_function(&quick_spec()).unwrap();
        assert_eq!(vf.evaluate(Coalition::empty(3).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn exact_attribution_trains_each_coalition_once() {
        let vf = build_value_function(&quick_spec()).unwrap();
        let a = exact_shapley(&vf, 3).unwrap();
        assert_eq!(vf.coalitions_trained(), 8);
        assert_eq!(vf.runs_completed(), 16);
        assert_eq!(a.evaluations_used, 8);
        exact_shapley(&vf, 3).unwrap();
        assert_eq!(vf.runs_completed(), 16);
    }

    #[test]
    fn value_is_seed_mean_of_paired_differences() {
        let vf = build_value_function(&quick_spec()).unwrap();
        let c = Coalition::from_mask(0b100, 3).unwrap();
        let o = vf.outcomes(&[c, Coalition::empty(3).unwrap()]);
        let diff: f64 = o[0]
            .runs
            .iter()
            .zip(&o[1].runs)
            .map(|(a, b)| a.as_ref().unwrap().accuracy - b.as_ref().unwrap().accuracy)
            .sum::<f64>()
            / 2.0;
        assert_eq!(vf.evaluate(c).unwrap(), diff);
    }

    #[test]
    fn divergence_surfaces_per_coalition() {
        let mut spec = quick_spec();
        spec.train.lr = f64::MAX;
        let vf = build_value_function(&spec).unwrap();
        let out = vf.outcomes(&[Coalition::grand(3).unwrap()]);
        assert!(out[0].error().is_some());
        assert!(out[0].mean_accuracy().is_none());
        assert!(matches!(
            vf.evaluate(Coalition::grand(3).unwrap()),
            Err(Error::Evaluation { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let mut spec = quick_spec();
        spec.knowledge[1].name = "OneHot".into();
        assert!(spec.validate().is_err());
        let mut spec = quick_spec();
        spec.knowledge.clear();
        assert!(spec.validate().is_err());
        let mut spec = quick_spec();
        spec.schema_version = 9;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let mut spec = quick_spec();
        spec.attribution = AttributionSpec::MonteCarlo(McConfig::new(500, 3));
        let s = serde_json::to_string_pretty(&spec).unwrap();
        assert_eq!(ExperimentSpec::from_json_str(&s).unwrap(), spec);
    }
}
