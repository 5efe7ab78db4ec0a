//! Reader for the big-endian IDX files used by the handwritten-digit
//! benchmark: a 4-byte magic (2051 for images, 2049 for labels), 4-byte
//! dimensions, then one unsigned byte per pixel or label.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RawDataset;
use crate::trainer::LabeledSet;
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const DIGIT_CLASSES: usize = 10;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::DigitFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated header"))
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(Vec<Vec<f64>>, usize)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(
            path,
            format!("image magic {magic}, expected {IMAGE_MAGIC}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let dim = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < n * dim {
        return Err(format_err(
            path,
            format!(
                "truncated payload: {} bytes for {n} images of {dim} pixels",
                payload.len()
            ),
        ));
    }
    let images = payload[..n * dim]
        .chunks_exact(dim.max(1))
        .take(n)
        .map(|px| px.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    Ok((images, dim))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(format_err(
            path,
            format!("label magic {magic}, expected {LABEL_MAGIC}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(format_err(
            path,
            format!("truncated payload: {} labels of {n}", payload.len()),
        ));
    }
    Ok(payload[..n].iter().map(|&b| b as usize).collect())
}

/// Loads an image file and its label file as labelled pairs scaled to [0, 1].
pub fn load_digit_files(image_path: &Path, label_path: &Path) -> Result<LabeledSet> {
    let (x, _) = parse_images(&fs::read(image_path)?, image_path)?;
    let y = parse_labels(&fs::read(label_path)?, label_path)?;
    if x.len() != y.len() {
        return Err(format_err(
            label_path,
            format!("{} labels for {} images", y.len(), x.len()),
        ));
    }
    if let Some(bad) = y.iter().find(|&&l| l >= DIGIT_CLASSES) {
        return Err(format_err(
            label_path,
            format!("label {bad} is not a digit"),
        ));
    }
    Ok(LabeledSet { x, y })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Labelled samples, split evenly over the ten digits.
    pub n_labeled: usize,
    /// Unlabelled samples; all remaining training images when absent.
    #[serde(default)]
    pub n_unlabeled: Option<usize>,
    /// Test samples; the whole test file when absent.
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Splits the training file into a class-balanced labelled set and an
/// unlabelled remainder, in an order fixed by `seed`.
pub fn partition_digits(
    train: LabeledSet,
    test: LabeledSet,
    n_labeled: usize,
    n_unlabeled: Option<usize>,
    n_test: Option<usize>,
    seed: u64,
) -> Result<RawDataset> {
    let input_dim = train.x.first().map_or(0, Vec::len);
    if !n_labeled.is_multiple_of(DIGIT_CLASSES) {
        return Err(Error::Config(format!(
            "n_labeled = {n_labeled} is not a multiple of {DIGIT_CLASSES}"
        )));
    }
    let per_class = n_labeled / DIGIT_CLASSES;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut taken = [0usize; DIGIT_CLASSES];
    let mut labeled = Vec::new();
    let mut rest = Vec::new();
    for i in order {
        let y = train.y[i];
        if taken[y] < per_class {
            taken[y] += 1;
            labeled.push(i);
        } else {
            rest.push(i);
        }
    }
    if let Some(c) = taken.iter().position(|&t| t < per_class) {
        return Err(Error::Config(format!(
            "not enough training images of digit {c}"
        )));
    }
    let n_unlabeled = n_unlabeled.unwrap_or(rest.len());
    if n_unlabeled > rest.len() {
        return Err(Error::Config(format!(
            "{n_unlabeled} unlabelled images requested, {} available",
            rest.len()
        )));
    }
    rest.truncate(n_unlabeled);
    let n_test = n_test.unwrap_or(test.len()).min(test.len());
    Ok(RawDataset {
        n_classes: DIGIT_CLASSES,
        input_dim,
        labeled: LabeledSet {
            x: labeled.iter().map(|&i| train.x[i].clone()).collect(),
            y: labeled.iter().map(|&i| train.y[i]).collect(),
        },
        unlabeled_x: rest.iter().map(|&i| train.x[i].clone()).collect(),
        unlabeled_y: rest.iter().map(|&i| train.y[i]).collect(),
        test: LabeledSet {
            x: test.x[..n_test].to_vec(),
            y: test.y[..n_test].to_vec(),
        },
    })
}

pub fn load_digit_source(src: &DigitSource) -> Result<RawDataset> {
    let train = load_digit_files(&src.train_images, &src.train_labels)?;
    let test = load_digit_files(&src.test_images, &src.test_labels)?;
    partition_digits(
        train,
        test,
        src.n_labeled,
        src.n_unlabeled,
        src.n_test,
        src.seed,
    )
}

/// Serializes images in the IDX layout. Used to build fixtures.
pub fn encode_images(images: &[Vec<u8>], rows: u32, cols: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    out.extend(IMAGE_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend(rows.to_be_bytes());
    out.extend(cols.to_be_bytes());
    for img in images {
        out.extend(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, n: usize, name: &str) -> (PathBuf, PathBuf) {
        let images: Vec<Vec<u8>> = (0..n).map(|i| vec![(i % 256) as u8, 255, 0, 128]).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let ip = dir.join(format!("{name}-images"));
        let lp = dir.join(format!("{name}-labels"));
        fs::write(&ip, encode_images(&images, 2, 2)).unwrap();
        fs::write(&lp, encode_labels(&labels)).unwrap();
        (ip, lp)
    }

    #[test]
    fn parses_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 30, "train");
        let set = load_digit_files(&ip, &lp).unwrap();
        assert_eq!(set.len(), 30);
        assert_eq!(set.x[3], vec![3.0 / 255.0, 1.0, 0.0, 128.0 / 255.0]);
        assert_eq!(set.y[13], 3);
    }

    #[test]
    fn rejects_wrong_magic() {
        let p = Path::new("x");
        let mut bytes = encode_labels(&[1, 2]);
        assert!(parse_images(&bytes, p).is_err());
        bytes[3] = 0x02; // 2050
        assert!(parse_labels(&bytes, p).is_err());
        assert!(parse_images(&encode_images(&[vec![0; 4]], 2, 2), p).is_ok());
        assert!(parse_labels(&encode_labels(&[0]), p).is_ok());
    }

    #[test]
    fn rejects_truncation_and_mismatch() {
        let p = Path::new("x");
        let mut img = encode_images(&[vec![1; 4], vec![2; 4]], 2, 2);
        img.pop();
        assert!(matches!(
            parse_images(&img, p),
            Err(Error::DigitFormat { .. })
        ));
        assert!(parse_labels(&encode_labels(&[1, 2])[..9], p).is_err());
        assert!(parse_labels(&[0, 0, 8], p).is_err());

        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = write_pair(dir.path(), 5, "a");
        let (_, lp) = write_pair(dir.path(), 6, "b");
        assert!(load_digit_files(&ip, &lp).is_err());
    }

    #[test]
    fn balanced_partition() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 400, "train");
        let (tip, tlp) = write_pair(dir.path(), 50, "test");
        let src = DigitSource {
            train_images: ip,
            train_labels: lp,
            test_images: tip,
            test_labels: tlp,
            n_labeled: 100,
            n_unlabeled: None,
            n_test: Some(20),
            seed: 3,
        };
        let raw = load_digit_source(&src).unwrap();
        for d in 0..10 {
            assert_eq!(raw.labeled.y.iter().filter(|&&y| y == d).count(), 10);
        }
        assert_eq!(raw.unlabeled_x.len(), 300);
        assert_eq!(raw.test.len(), 20);
        assert_eq!(raw, load_digit_source(&src).unwrap());
        assert!(load_digit_source(&DigitSource {
            n_labeled: 95,
            ..src.clone()
        })
        .is_err());
        assert!(load_digit_source(&DigitSource {
            n_unlabeled: Some(301),
            ..src
        })
        .is_err());
    }
}
