//! Desk-scale informed-learning testbed: synthetic Gaussian-mixture tasks,
//! an IDX digit reader, knowledge truth bits, and the coalition value
//! function built from repeated training runs.

mod digits;
mod experiment;
mod synthetic;

pub use digits::{
    encode_images, encode_labels, load_digit_files, load_digit_source, parse_images, parse_labels,
    partition_digits, DigitSource, DIGIT_CLASSES, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use experiment::{
    build_value_function, default_knowledge, AttributionSpec, CoalitionOutcome, DatasetSource,
    ExperimentSpec, KnowledgeValueFunction, RunRecord, EXPERIMENT_SCHEMA_VERSION,
};
pub use synthetic::{generate_blobs, SyntheticSpec};

use crate::knowledge::{corrupt_truth_bits, KnowledgeSpec, LabelSpace};
use crate::trainer::{Dataset, LabeledSet, UnlabeledSet};
use crate::Result;

/// A freshly drawn or loaded task. The unlabelled ground truth is kept
/// private: only [`attach_knowledge_truth`] reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub n_classes: usize,
    pub input_dim: usize,
    pub labeled: LabeledSet,
    pub unlabeled_x: Vec<Vec<f64>>,
    unlabeled_y: Vec<usize>,
    pub test: LabeledSet,
}

/// Flipped truth-bit positions per knowledge item (empty for knowledge
/// without per-sample bits).
pub type FlippedBits = Vec<Vec<usize>>;

/// Turns a raw task into a trainer dataset. Subset knowledge gets one
/// membership bit per unlabelled sample, computed from the hidden label and
/// then corrupted at the item's rate.
pub fn attach_knowledge_truth(
    raw: &RawDataset,
    knowledge: &[KnowledgeSpec],
) -> Result<(Dataset, FlippedBits)> {
    let labels = LabelSpace::new(raw.n_classes)?;
    for k in knowledge {
        k.validate(labels)?;
    }
    if let Some(&y) = raw.unlabeled_y.iter().find(|&&y| y >= raw.n_classes) {
        return Err(crate::Error::Config(format!(
            "label {y} outside {} classes",
            raw.n_classes
        )));
    }
    let mut truth = Vec::with_capacity(knowledge.len());
    let mut flipped = Vec::with_capacity(knowledge.len());
    for k in knowledge {
        match &k.subset {
            Some(subset) if k.has_truth_bits() => {
                let bits: Vec<bool> = raw.unlabeled_y.iter().map(|y| subset.contains(y)).collect();
                let c = corrupt_truth_bits(&bits, k.corruption_rate, k.seed);
                truth.push(Some(c.bits));
                flipped.push(c.flipped);
            }
            _ => {
                truth.push(None);
                flipped.push(Vec::new());
            }
        }
    }
    let dataset = Dataset {
        n_classes: raw.n_classes,
        input_dim: raw.input_dim,
        labeled: raw.labeled.clone(),
        unlabeled: UnlabeledSet {
            x: raw.unlabeled_x.clone(),
            truth,
        },
        test: raw.test.clone(),
        knowledge: knowledge.to_vec(),
    };
    dataset.validate()?;
    Ok((dataset, flipped))
}
