use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::RawDataset;
use crate::trainer::LabeledSet;
use crate::{Error, Result};

/// Gaussian-mixture task: class `c` draws `means[c] + sigma * N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub input_dim: usize,
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Four classes in eight dimensions. Classes 0, 1 and 2 sit far apart at
    /// the corners of a triangle; class 3 sits near its centroid and overlaps
    /// all three, so most residual error involves class 3.
    pub fn default_task(seed: u64) -> Self {
        let mut means = vec![vec![0.0; 8]; 4];
        for (c, m) in means.iter_mut().take(3).enumerate() {
            m[c] = 2.5;
        }
        means[3][..3].fill(0.8);
        Self {
            n_classes: 4,
            input_dim: 8,
            means,
            sigma: 0.7,
            n_labeled: 40,
            n_unlabeled: 2000,
            n_test: 2000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(
                "synthetic task needs at least 2 classes".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.n_labeled == 0 || self.n_unlabeled == 0 || self.n_test == 0 {
            return Err(Error::Config("sample counts must be at least 1".into()));
        }
        if self.means.len() != self.n_classes {
            return Err(Error::Dimension {
                expected: self.n_classes,
                found: self.means.len(),
            });
        }
        if let Some(m) = self.means.iter().find(|m| m.len() != self.input_dim) {
            return Err(Error::Dimension {
                expected: self.input_dim,
                found: m.len(),
            });
        }
        Ok(())
    }
}

/// Labels for a split of `n` samples: as balanced as possible, lower classes
/// taking the remainder, in shuffled order.
fn balanced_labels(n: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    y.shuffle(rng);
    y
}

fn draw(spec: &SyntheticSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&y| {
            spec.means[y]
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + spec.sigma * z
                })
                .collect()
        })
        .collect()
}

/// Draws the labelled, unlabelled and test splits. Every split is drawn
/// independently, so no sample is shared between them.
pub fn generate_blobs(spec: &SyntheticSpec) -> Result<RawDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ly = balanced_labels(spec.n_labeled, spec.n_classes, &mut rng);
    let lx = draw(spec, &ly, &mut rng);
    let uy = balanced_labels(spec.n_unlabeled, spec.n_classes, &mut rng);
    let ux = draw(spec, &uy, &mut rng);
    let ty = balanced_labels(spec.n_test, spec.n_classes, &mut rng);
    let tx = draw(spec, &ty, &mut rng);
    Ok(RawDataset {
        n_classes: spec.n_classes,
        input_dim: spec.input_dim,
        labeled: LabeledSet { x: lx, y: ly },
        unlabeled_x: ux,
        unlabeled_y: uy,
        test: LabeledSet { x: tx, y: ty },
    })
}
