//! Symbolic label knowledge and semantic losses.
//!
//! A classifier exposes one independent Bernoulli probability `p_j` per label.
//! For a sentence `α` over the label indicators, the semantic loss is
//!
//! ```text
//! L(α, p) = -log Σ_{S ⊨ α} Π_{j: S_j = 1} p_j · Π_{j: S_j = 0} (1 - p_j)
//! ```
//!
//! evaluated in log space. Exactly-one and subset-membership sentences have
//! closed forms ([`one_hot_loss`], [`subset_loss`]); [`semantic_loss`] always
//! goes through the satisfying states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Largest label space for which `{0,1}^J` may be enumerated.
pub const STATE_ENUMERATION_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    n_classes: usize,
}

impl LabelSpace {
    pub fn new(n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        Ok(Self { n_classes })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

/// A logical sentence over the label indicators `Y = j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LogicalSentence {
    /// Exactly one label is true.
    ExactlyOne,
    /// The true label is (or with `inside = false`, is not) in `subset`,
    /// under exactly-one semantics.
    SubsetMembership { subset: Vec<usize>, inside: bool },
    /// Explicit list of satisfying states, each of length J.
    GeneralDnf { states: Vec<Vec<bool>> },
}

impl LogicalSentence {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        match self {
            LogicalSentence::ExactlyOne => Ok(()),
            LogicalSentence::SubsetMembership { subset, .. } => {
                validate_subset(subset, n_classes).map(|_| ())
            }
            LogicalSentence::GeneralDnf { states } => {
                if n_classes > STATE_ENUMERATION_LIMIT {
                    return Err(Error::Config(format!(
                        "{n_classes} classes exceeds the limit of {STATE_ENUMERATION_LIMIT} for explicit states"
                    )));
                }
                if states.is_empty() {
                    return Err(Error::Unsatisfiable("empty state list".into()));
                }
                if let Some(s) = states.iter().find(|s| s.len() != n_classes) {
                    return Err(Error::Dimension {
                        expected: n_classes,
                        found: s.len(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Labels whose one-hot state satisfies the sentence, for the exactly-one
    /// families.
    fn one_hot_labels(&self, n_classes: usize) -> Result<Option<Vec<usize>>> {
        match self {
            LogicalSentence::ExactlyOne => Ok(Some((0..n_classes).collect())),
            LogicalSentence::SubsetMembership { subset, inside } => {
                let set = validate_subset(subset, n_classes)?;
                Ok(Some(
                    (0..n_classes).filter(|j| set[*j] == *inside).collect(),
                ))
            }
            LogicalSentence::GeneralDnf { .. } => Ok(None),
        }
    }

    /// Whether `state` satisfies the sentence.
    pub fn satisfied_by(&self, state: &[bool]) -> bool {
        let one_hot_label = || {
            let mut on = state.iter().enumerate().filter(|(_, b)| **b);
            match (on.next(), on.next()) {
                (Some((j, _)), None) => Some(j),
                _ => None,
            }
        };
        match self {
            LogicalSentence::ExactlyOne => one_hot_label().is_some(),
            LogicalSentence::SubsetMembership { subset, inside } => {
                one_hot_label().is_some_and(|j| subset.contains(&j) == *inside)
            }
            LogicalSentence::GeneralDnf { states } => states.iter().any(|s| s == state),
        }
    }
}

fn validate_subset(subset: &[usize], n_classes: usize) -> Result<Vec<bool>> {
    let mut set = vec![false; n_classes];
    for &j in subset {
        if j >= n_classes {
            return Err(Error::Config(format!(
                "label {j} outside {n_classes} classes"
            )));
        }
        set[j] = true;
    }
    let count = set.iter().filter(|b| **b).count();
    if count == 0 || count == n_classes {
        return Err(Error::Unsatisfiable(format!(
            "label subset {subset:?} must be nonempty and proper in {n_classes} classes"
        )));
    }
    Ok(set)
}

fn one_hot(j: usize, n_classes: usize) -> Vec<bool> {
    (0..n_classes).map(|i| i == j).collect()
}

/// The satisfying states of `sentence` in `{0,1}^J`, sorted.
pub fn satisfying_states(sentence: &LogicalSentence, n_classes: usize) -> Result<Vec<Vec<bool>>> {
    sentence.validate(n_classes)?;
    let mut states = match sentence.one_hot_labels(n_classes)? {
        Some(labels) => labels.into_iter().map(|j| one_hot(j, n_classes)).collect(),
        None => match sentence {
            LogicalSentence::GeneralDnf { states } => states.clone(),
            _ => unreachable!(),
        },
    };
    states.sort_unstable_by(|a, b| b.cmp(a));
    states.dedup();
    if states.is_empty() {
        return Err(Error::Unsatisfiable(format!("{sentence:?}")));
    }
    Ok(states)
}

/// Per-label probabilities `P̂_j(X)`, clamped into `[ε, 1 - ε]`. They need
/// not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: &[f64]) -> Self {
        Self(
            p.iter()
                .map(|&x| {
                    if x.is_nan() {
                        0.5
                    } else {
                        x.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
                    }
                })
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn state_log_prob(state: &[bool], log_p: &[f64], log_q: &[f64]) -> f64 {
    state
        .iter()
        .zip(log_p.iter().zip(log_q))
        .map(|(s, (lp, lq))| if *s { *lp } else { *lq })
        .sum()
}

/// Semantic loss by summation over the satisfying states.
pub fn semantic_loss(sentence: &LogicalSentence, p: &ProbVector) -> Result<f64> {
    let states = satisfying_states(sentence, p.len())?;
    let log_p: Vec<f64> = p.0.iter().map(|x| x.ln()).collect();
    let log_q: Vec<f64> = p.0.iter().map(|x| (-x).ln_1p()).collect();
    let lse = log_sum_exp(states.iter().map(|s| state_log_prob(s, &log_p, &log_q)));
    Ok((-lse).max(0.0))
}

/// Closed form over one-hot states: `Σ_i log(1-p_i) + log Σ_{j∈labels} p_j/(1-p_j)`.
fn one_hot_family_loss(p: &ProbVector, labels: &[usize]) -> f64 {
    let log_q_total: f64 = p.0.iter().map(|x| (-x).ln_1p()).sum();
    let lse = log_sum_exp(labels.iter().map(|&j| p.0[j].ln() - (-p.0[j]).ln_1p()));
    (-(log_q_total + lse)).max(0.0)
}

/// Loss of the sentence "exactly one label is correct".
pub fn one_hot_loss(p: &ProbVector) -> f64 {
    let labels: Vec<usize> = (0..p.len()).collect();
    one_hot_family_loss(p, &labels)
}

/// Loss of "the correct label is in `subset`" (or its complement when
/// `inside` is false).
pub fn subset_loss(p: &ProbVector, subset: &[usize], inside: bool) -> Result<f64> {
    let set = validate_subset(subset, p.len())?;
    let labels: Vec<usize> = (0..p.len()).filter(|j| set[*j] == inside).collect();
    Ok(one_hot_family_loss(p, &labels))
}

/// Exact gradient of [`semantic_loss`] with respect to each (clamped) `p_j`.
pub fn semantic_loss_grad(sentence: &LogicalSentence, p: &ProbVector) -> Result<Vec<f64>> {
    let states = satisfying_states(sentence, p.len())?;
    let log_p: Vec<f64> = p.0.iter().map(|x| x.ln()).collect();
    let log_q: Vec<f64> = p.0.iter().map(|x| (-x).ln_1p()).collect();
    let weights = state_posterior(&states, &log_p, &log_q);
    // dL/dp_j = -Σ_S π_S (S_j / p_j - (1 - S_j) / (1 - p_j))
    let mut grad = vec![0.0; p.len()];
    for (s, w) in states.iter().zip(&weights) {
        for (j, g) in grad.iter_mut().enumerate() {
            *g -= w * if s[j] {
                1.0 / p.0[j]
            } else {
                -1.0 / (1.0 - p.0[j])
            };
        }
    }
    Ok(grad)
}

fn state_posterior(states: &[Vec<bool>], log_p: &[f64], log_q: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = states
        .iter()
        .map(|s| state_log_prob(s, log_p, log_q))
        .collect();
    let lse = log_sum_exp(logs.iter().copied());
    logs.iter().map(|l| (l - lse).exp()).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Semantic loss and its gradient with respect to the logits `z`, where
/// `p_j = σ(z_j)`. Used by the trainer; no clamping is needed since
/// `log σ(z) = -softplus(-z)` is finite everywhere.
///
/// For exactly-one families this reduces to
/// `L = Σ_i softplus(z_i) - logsumexp_{j∈labels} z_j` with
/// `dL/dz_i = σ(z_i) - softmax_labels(z)_i`.
pub fn semantic_loss_logits(sentence: &LogicalSentence, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    let j = logits.len();
    let sigma: Vec<f64> = logits
        .iter()
        .map(|&z| crate::trainer::logistic(z))
        .collect();
    if let Some(labels) = sentence.one_hot_labels(j)? {
        let total: f64 = logits.iter().map(|&z| softplus(z)).sum();
        let lse = log_sum_exp(labels.iter().map(|&l| logits[l]));
        let mut grad = sigma;
        for &l in &labels {
            grad[l] -= (logits[l] - lse).exp();
        }
        return Ok(((total - lse).max(0.0), grad));
    }
    let states = satisfying_states(sentence, j)?;
    let log_p: Vec<f64> = logits.iter().map(|&z| -softplus(-z)).collect();
    let log_q: Vec<f64> = logits.iter().map(|&z| -softplus(z)).collect();
    let logs: Vec<f64> = states
        .iter()
        .map(|s| state_log_prob(s, &log_p, &log_q))
        .collect();
    let lse = log_sum_exp(logs.iter().copied());
    let mut grad = sigma;
    for (s, l) in states.iter().zip(&logs) {
        let w = (l - lse).exp();
        for (g, on) in grad.iter_mut().zip(s) {
            if *on {
                *g -= w;
            }
        }
    }
    Ok(((-lse).max(0.0), grad))
}

/// Which family a knowledge item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeFamily {
    OneHot,
    Subset,
}

fn default_lambda() -> f64 {
    0.1
}

/// One piece of symbolic knowledge injected through an unlabelled-data loss.
///
/// For the subset family every unlabelled sample carries its own truth bit
/// (is the label inside `subset`?); a fraction `corruption_rate` of those
/// bits is flipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSpec {
    pub name: String,
    pub family: KnowledgeFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<Vec<usize>>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub corruption_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl KnowledgeSpec {
    pub fn one_hot(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            family: KnowledgeFamily::OneHot,
            subset: None,
            lambda: default_lambda(),
            corruption_rate: 0.0,
            seed: 0,
        }
    }

    pub fn subset(name: impl Into<String>, labels: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            family: KnowledgeFamily::Subset,
            subset: Some(labels),
            lambda: default_lambda(),
            corruption_rate: 0.0,
            seed: 0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_corruption(mut self, rate: f64, seed: u64) -> Self {
        self.corruption_rate = rate;
        self.seed = seed;
        self
    }

    pub fn validate(&self, labels: LabelSpace) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("{}: lambda must be >= 0", self.name)));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Config(format!(
                "{}: corruption_rate must lie in [0, 1]",
                self.name
            )));
        }
        match (self.family, &self.subset) {
            (KnowledgeFamily::OneHot, None) => Ok(()),
            (KnowledgeFamily::OneHot, Some(_)) => Err(Error::Config(format!(
                "{}: one_hot knowledge takes no subset",
                self.name
            ))),
            (KnowledgeFamily::Subset, Some(s)) => {
                validate_subset(s, labels.n_classes()).map(|_| ())
            }
            (KnowledgeFamily::Subset, None) => Err(Error::Config(format!(
                "{}: subset knowledge needs a `subset` list",
                self.name
            ))),
        }
    }

    /// Whether samples carry per-sample truth bits for this knowledge.
    pub fn has_truth_bits(&self) -> bool {
        self.family == KnowledgeFamily::Subset
    }

    /// The sentence asserted for one sample, given its truth bit (ignored
    /// for one-hot knowledge).
    pub fn sentence(&self, bit: bool) -> LogicalSentence {
        match self.family {
            KnowledgeFamily::OneHot => LogicalSentence::ExactlyOne,
            KnowledgeFamily::Subset => LogicalSentence::SubsetMembership {
                subset: self.subset.clone().unwrap_or_default(),
                inside: bit,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub bits: Vec<bool>,
    /// Indices whose bit was flipped, ascending.
    pub flipped: Vec<usize>,
}

/// Flips exactly `round(rate · M)` bits at positions chosen from `seed`.
pub fn corrupt_truth_bits(bits: &[bool], rate: f64, seed: u64) -> Corruption {
    let m = bits.len();
    let count = ((rate.clamp(0.0, 1.0) * m as f64).round() as usize).min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flipped = rand::seq::index::sample(&mut rng, m, count).into_vec();
    flipped.sort_unstable();
    let mut out = bits.to_vec();
    for &i in &flipped {
        out[i] = !out[i];
    }
    Corruption { bits: out, flipped }
}
