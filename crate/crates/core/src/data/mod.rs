//! Datasets: IDX and CSV ingestion, synthetic generators, seeded batching.

mod csv_io;
mod idx;
mod synthetic;

pub use csv_io::{load_csv, write_csv};
pub use idx::{load_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synthetic::{gen_synthetic, SyntheticKind};

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Labeled samples with features in `[0, 1]`, stored as `f32` rows of
/// `channels · height · width` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    shape: [usize; 3],
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<f32>,
        shape: [usize; 3],
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Dataset> {
        let dim: usize = shape.iter().product();
        if labels.is_empty() {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::InvalidDataset(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidDataset(format!("label {l} outside 0..{num_classes}")));
        }
        if let Some(v) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidDataset(format!("feature value {v} outside [0, 1]")));
        }
        Ok(Dataset {
            features,
            shape,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[channels, height, width]` of one sample.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn feature_dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let d = self.feature_dim();
        &self.features[i * d..(i + 1) * d]
    }

    /// Widens the class count, e.g. so a test split agrees with its training split.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Dataset> {
        if num_classes < self.num_classes {
            return Err(Error::InvalidDataset(format!(
                "cannot shrink class count from {} to {num_classes}",
                self.num_classes
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Features of the given samples as a `rows × feature_dim` matrix.
    pub fn feature_rows(&self, idx: &[usize]) -> Mat {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend(self.sample(i).iter().map(|v| f64::from(*v)));
        }
        Mat::from_vec(idx.len(), d, data).expect("features are finite")
    }

    pub fn feature_range(&self, rows: Range<usize>) -> Mat {
        let idx: Vec<usize> = rows.collect();
        self.feature_rows(&idx)
    }

    /// One-hot targets for the given samples.
    pub fn one_hot(&self, idx: &[usize]) -> Mat {
        let mut m = Mat::zeros(idx.len(), self.num_classes);
        for (r, &i) in idx.iter().enumerate() {
            m[(r, self.labels[i])] = 1.0;
        }
        m
    }

    pub fn one_hot_range(&self, rows: Range<usize>) -> Mat {
        let idx: Vec<usize> = rows.collect();
        self.one_hot(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let d = self.feature_dim();
        let mut features = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("sample index {i} out of range")));
            }
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(self.name.clone(), features, self.shape, labels, self.num_classes)
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Splits off a seeded random `test_fraction` of the samples as `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.clamp(1, self.len().saturating_sub(1).max(1));
        let (test, train) = idx.split_at(n_test);
        let (mut train, mut test) = (train.to_vec(), test.to_vec());
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }
}

/// Seeded sample order for one epoch, cut into mini-batches.
///
/// The last partial batch is kept. The order is a permutation derived from
/// `(seed, epoch)`, so iterating twice yields the same batches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batches {
    order: Vec<usize>,
    batch_size: usize,
}

impl Batches {
    pub fn iter(&self) -> std::slice::Chunks<'_, usize> {
        self.order.chunks(self.batch_size)
    }

    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

pub fn batches(ds: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Result<Batches> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    Ok(Batches { order, batch_size })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> Dataset {
        let features = (0..n * 2).map(|i| (i % 10) as f32 / 10.0).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new("tiny", features, [1, 1, 2], labels, 3).unwrap()
    }

    #[test]
    fn rejects_invalid_contents() {
        assert!(Dataset::new("x", vec![], [1, 1, 2], vec![], 2).is_err());
        assert!(Dataset::new("x", vec![0.0, 0.5], [1, 1, 2], vec![2], 2).is_err());
        assert!(Dataset::new("x", vec![0.0, 1.5], [1, 1, 2], vec![0], 2).is_err());
        assert!(Dataset::new("x", vec![0.0], [1, 1, 2], vec![0], 2).is_err());
    }

    #[test]
    fn oversized_batch_is_single() {
        let ds = tiny(5);
        let b = batches(&ds, 100, 1, 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.iter().next().unwrap().len(), 5);
    }

    #[test]
    fn batching_is_replayable_and_seeded() {
        let ds = tiny(50);
        let a = batches(&ds, 8, 9, 2).unwrap();
        assert_eq!(a, batches(&ds, 8, 9, 2).unwrap());
        assert_ne!(a, batches(&ds, 8, 9, 3).unwrap());
        assert_eq!(a.len(), 7);
        assert_eq!(a.iter().last().unwrap().len(), 2);
        assert!(batches(&ds, 0, 9, 2).is_err());
    }

    #[test]
    fn batches_cover_every_row_once() {
        let ds = tiny(37);
        let b = batches(&ds, 5, 4, 1).unwrap();
        let mut seen: Vec<usize> = b.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn split_partitions_samples() {
        let ds = tiny(20);
        let (train, test) = ds.split(0.25, 5).unwrap();
        assert_eq!((train.len(), test.len()), (15, 5));
        assert_eq!(ds.one_hot(&[0, 4]).as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
