//! Deterministic semi-supervised training with knowledge losses.
//!
//! The objective for a knowledge coalition `S` is
//!
//! ```text
//! L = Σ_{(x,y) labelled} CE(x, y) + Σ_{n ∈ S} λ_n Σ_{x unlabelled} L_{K_n}(x)
//! ```
//!
//! where `CE` is per-class binary cross-entropy against the one-hot target
//! and `L_{K_n}` the semantic loss of knowledge `n` for that sample.
//! Each step pairs a labelled batch (the labelled set is cycled and
//! reshuffled so it keeps pace with the unlabelled set) with an unlabelled
//! batch and applies one Adam update.

mod adam;
mod mlp;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::knowledge::{semantic_loss_logits, KnowledgeSpec};
use crate::{Coalition, Error, Result};

use adam::Adam;
pub use mlp::{forward, forward_batch, init_mlp, logistic, MlpParams, PARAMS_FORMAT_VERSION};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Unlabelled inputs with one truth-bit column per knowledge item
/// (`None` for knowledge without per-sample bits).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSet {
    pub x: Vec<Vec<f64>>,
    pub truth: Vec<Option<Vec<bool>>>,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// What the trainer sees: labelled pairs, unlabelled inputs with knowledge
/// truth bits, and the test split. Unlabelled ground truth is not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_classes: usize,
    pub input_dim: usize,
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: LabeledSet,
    pub knowledge: Vec<KnowledgeSpec>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.labeled.is_empty() {
            return Err(Error::Config("dataset has no labelled samples".into()));
        }
        for set in [&self.labeled, &self.test] {
            if set.x.len() != set.y.len() {
                return Err(Error::Dimension {
                    expected: set.y.len(),
                    found: set.x.len(),
                });
            }
            if let Some(&y) = set.y.iter().find(|&&y| y >= self.n_classes) {
                return Err(Error::Config(format!(
                    "label {y} outside {} classes",
                    self.n_classes
                )));
            }
        }
        let xs = self
            .labeled
            .x
            .iter()
            .chain(&self.unlabeled.x)
            .chain(&self.test.x);
        if let Some(x) = xs.into_iter().find(|x| x.len() != self.input_dim) {
            return Err(Error::Dimension {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        if self.unlabeled.truth.len() != self.knowledge.len() {
            return Err(Error::Config(format!(
                "{} truth columns for {} knowledge items",
                self.unlabeled.truth.len(),
                self.knowledge.len()
            )));
        }
        for (k, col) in self.knowledge.iter().zip(&self.unlabeled.truth) {
            match col {
                Some(bits) if bits.len() != self.unlabeled.len() => {
                    return Err(Error::Dimension {
                        expected: self.unlabeled.len(),
                        found: bits.len(),
                    })
                }
                None if k.has_truth_bits() => {
                    return Err(Error::Config(format!(
                        "knowledge {} has no truth bits",
                        k.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrPhase {
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hidden layer widths; input and output widths come from the dataset.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size_labeled: usize,
    pub batch_size_unlabeled: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Phases run after the main phase, each at its own learning rate.
    pub tuning: Vec<LrPhase>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let lr = 1e-3;
        Self {
            hidden: vec![64, 32],
            epochs: 12,
            batch_size_labeled: 16,
            batch_size_unlabeled: 16,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            tuning: [0.5, 0.1, 0.05, 0.01]
                .iter()
                .map(|s| LrPhase {
                    lr: lr * s,
                    epochs: 1,
                })
                .collect(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size_labeled == 0 || self.batch_size_unlabeled == 0 {
            return Err(Error::Config(
                "epochs and batch sizes must be positive".into(),
            ));
        }
        let lr_ok = |lr: f64| lr > 0.0 && lr.is_finite();
        if !lr_ok(self.lr) || !self.tuning.iter().all(|p| lr_ok(p.lr)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("zero-width hidden layer".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_dim: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(n_classes);
        sizes
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn phases(&self) -> Vec<LrPhase> {
        let mut phases = vec![LrPhase {
            lr: self.lr,
            epochs: self.epochs,
        }];
        phases.extend(&self.tuning);
        phases
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeTerm {
    pub name: String,
    /// Mean semantic loss over the unlabelled set, before weighting.
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub test_accuracy: f64,
    /// Mean cross-entropy over the labelled set after training.
    pub data_loss: f64,
    pub knowledge_terms: Vec<KnowledgeTerm>,
    /// Mean objective value per step, one entry per epoch.
    pub loss_trace: Vec<f64>,
    pub steps: usize,
}

/// Objective value with its decomposition and gradient.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub total: f64,
    pub data: f64,
    /// Weighted contribution of each knowledge item, in dataset order; zero
    /// for items outside the coalition.
    pub knowledge: Vec<f64>,
    pub grad: Vec<f64>,
}

fn binary_ce_logits(z: &[f64], y: usize, d_logits: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for (j, (&zj, d)) in z.iter().zip(d_logits.iter_mut()).enumerate() {
        let t = if j == y { 1.0 } else { 0.0 };
        // softplus(z) - t z
        let sp = if zj > 0.0 {
            zj + (-zj).exp().ln_1p()
        } else {
            zj.exp().ln_1p()
        };
        loss += sp - t * zj;
        *d = logistic(zj) - t;
    }
    loss
}

fn data_term(params: &MlpParams, dataset: &Dataset, labeled: &[usize], grad: &mut [f64]) -> f64 {
    let mut total = 0.0;
    let mut d = vec![0.0; dataset.n_classes];
    for &i in labeled {
        let acts = params.forward_trace(&dataset.labeled.x[i]);
        total += binary_ce_logits(acts.last().unwrap(), dataset.labeled.y[i], &mut d);
        params.backward(&acts, &d, grad);
    }
    total
}

/// The combined objective on one labelled and one unlabelled batch, with
/// knowledge outside `coalition` contributing nothing.
pub fn combined_loss(
    params: &MlpParams,
    dataset: &Dataset,
    labeled: &[usize],
    unlabeled: &[usize],
    coalition: &Coalition,
) -> Result<LossEval> {
    if labeled.is_empty() {
        return Err(Error::Config("empty labelled batch".into()));
    }
    if coalition.n_players() != dataset.knowledge.len() {
        return Err(Error::PlayerCountMismatch {
            expected: dataset.knowledge.len(),
            found: coalition.n_players(),
        });
    }
    let mut grad = vec![0.0; params.params.len()];
    let data = data_term(params, dataset, labeled, &mut grad);
    let mut knowledge = vec![0.0; dataset.knowledge.len()];
    let mut total = data;

    let active: Vec<usize> = coalition.member_indices();
    if !active.is_empty() {
        let mut d = vec![0.0; dataset.n_classes];
        for &i in unlabeled {
            let acts = params.forward_trace(&dataset.unlabeled.x[i]);
            let z = acts.last().unwrap();
            d.iter_mut().for_each(|v| *v = 0.0);
            for &n in &active {
                let spec = &dataset.knowledge[n];
                let bit = dataset.unlabeled.truth[n].as_ref().is_some_and(|b| b[i]);
                let (loss, gz) = semantic_loss_logits(&spec.sentence(bit), z)?;
                knowledge[n] += spec.lambda * loss;
                for (dv, g) in d.iter_mut().zip(&gz) {
                    *dv += spec.lambda * g;
                }
            }
            params.backward(&acts, &d, &mut grad);
        }
        total += knowledge.iter().sum::<f64>();
    }
    Ok(LossEval {
        total,
        data,
        knowledge,
        grad,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy_of(outputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = outputs
        .iter()
        .zip(labels)
        .filter(|(o, y)| argmax(o) == **y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Test accuracy of the network. Predictions take the argmax over logits,
/// which orders classes exactly as the probabilities do.
pub fn evaluate_accuracy(params: &MlpParams, test: &LabeledSet) -> Result<f64> {
    let outputs = test
        .x
        .iter()
        .map(|x| params.logits(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(accuracy_of(&outputs, &test.y))
}

const STREAM_INIT: u64 = 0;
const STREAM_LABELED: u64 = 1;
const STREAM_UNLABELED: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Endless reshuffled pass over `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn take(&mut self, k: usize, out: &mut Vec<usize>) {
        out.clear();
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
    }
}

fn steps_per_epoch(dataset: &Dataset, config: &TrainConfig) -> usize {
    let (n, b) = if dataset.unlabeled.is_empty() {
        (dataset.labeled.len(), config.batch_size_labeled)
    } else {
        (dataset.unlabeled.len(), config.batch_size_unlabeled)
    };
    n.div_ceil(b)
}

enum Objective<'a> {
    /// Labelled data only; never touches the unlabelled set or knowledge.
    Supervised,
    Informed(&'a Coalition),
}

fn run(
    dataset: &Dataset,
    config: &TrainConfig,
    objective: Objective<'_>,
) -> Result<(MlpParams, Metrics)> {
    config.validate()?;
    dataset.validate()?;
    if let Objective::Informed(c) = &objective {
        if c.n_players() != dataset.knowledge.len() {
            return Err(Error::PlayerCountMismatch {
                expected: dataset.knowledge.len(),
                found: c.n_players(),
            });
        }
    }
    let sizes = config.layer_sizes(dataset.input_dim, dataset.n_classes);
    let mut params = init_mlp(&sizes, rng_seed(config.seed, STREAM_INIT))?;
    let mut opt = Adam::new(params.params.len(), config.beta1, config.beta2, config.eps);
    let mut labeled = Cycler::new(dataset.labeled.len(), rng_for(config.seed, STREAM_LABELED));
    let mut unlabeled_rng = rng_for(config.seed, STREAM_UNLABELED);
    let mut unlabeled_order: Vec<usize> = (0..dataset.unlabeled.len()).collect();
    let per_epoch = steps_per_epoch(dataset, config);

    let mut lbatch = Vec::with_capacity(config.batch_size_labeled);
    let mut loss_trace = Vec::new();
    let mut steps = 0;
    let mut epoch = 0;
    for phase in config.phases() {
        for _ in 0..phase.epochs {
            unlabeled_order.shuffle(&mut unlabeled_rng);
            let mut epoch_loss = 0.0;
            for step in 0..per_epoch {
                labeled.take(config.batch_size_labeled, &mut lbatch);
                let lo = (step * config.batch_size_unlabeled).min(unlabeled_order.len());
                let hi = (lo + config.batch_size_unlabeled).min(unlabeled_order.len());
                let ubatch = &unlabeled_order[lo..hi];
                let (loss, grad) = match objective {
                    Objective::Supervised => {
                        let mut grad = vec![0.0; params.params.len()];
                        let loss = data_term(&params, dataset, &lbatch, &mut grad);
                        (loss, grad)
                    }
                    Objective::Informed(c) => {
                        let eval = combined_loss(&params, dataset, &lbatch, ubatch, c)?;
                        (eval.total, eval.grad)
                    }
                };
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged { epoch, step, loss });
                }
                opt.step(&mut params.params, &grad, phase.lr);
                epoch_loss += loss;
                steps += 1;
            }
            loss_trace.push(epoch_loss / per_epoch as f64);
            epoch += 1;
        }
    }

    let metrics = final_metrics(&params, dataset, &objective, loss_trace, steps)?;
    Ok((params, metrics))
}

fn rng_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    rng_for(seed, stream).next_u64()
}

fn final_metrics(
    params: &MlpParams,
    dataset: &Dataset,
    objective: &Objective<'_>,
    loss_trace: Vec<f64>,
    steps: usize,
) -> Result<Metrics> {
    let all: Vec<usize> = (0..dataset.labeled.len()).collect();
    let mut scratch = vec![0.0; params.params.len()];
    let data_loss = data_term(params, dataset, &all, &mut scratch) / all.len() as f64;
    let mut knowledge_terms = Vec::new();
    if let Objective::Informed(c) = objective {
        let logits: Vec<Vec<f64>> = dataset
            .unlabeled
            .x
            .iter()
            .map(|x| params.logits(x))
            .collect::<Result<_>>()?;
        for n in c.member_indices() {
            let spec = &dataset.knowledge[n];
            let mut sum = 0.0;
            for (i, z) in logits.iter().enumerate() {
                let bit = dataset.unlabeled.truth[n].as_ref().is_some_and(|b| b[i]);
                sum += semantic_loss_logits(&spec.sentence(bit), z)?.0;
            }
            knowledge_terms.push(KnowledgeTerm {
                name: spec.name.clone(),
                mean_loss: sum / logits.len().max(1) as f64,
            });
        }
    }
    Ok(Metrics {
        test_accuracy: evaluate_accuracy(params, &dataset.test)?,
        data_loss,
        knowledge_terms,
        loss_trace,
        steps,
    })
}

/// Trains on the labelled data plus the knowledge in `coalition`. A pure
/// function of its inputs: the same dataset, coalition and config always
/// produce bit-identical parameters and metrics.
pub fn train(
    dataset: &Dataset,
    coalition: &Coalition,
    config: &TrainConfig,
) -> Result<(MlpParams, Metrics)> {
    run(dataset, config, Objective::Informed(coalition))
}

/// Conventional supervised training on the labelled set, with the same step
/// schedule as [`train`].
pub fn train_supervised(dataset: &Dataset, config: &TrainConfig) -> Result<(MlpParams, Metrics)> {
    run(dataset, config, Objective::Supervised)
}
