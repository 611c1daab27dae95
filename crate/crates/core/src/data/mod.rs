//! Datasets and batching: the synthetic two-pixel distance task and MNIST.
//!
//! Training consumes a `BatchStream`. The synthetic tasks generate fresh
//! images for every batch; finite datasets shuffle per epoch and drop the
//! partial tail batch. Evaluation always runs over a fixed `Dataset` in
//! storage order, so metrics don't depend on batching.

mod distance;
mod idx;

pub use distance::{
    generate_distance_dataset, DistanceStream, DISTANCE_IMAGE_SIZE, DISTANCE_LIMIT_SQ,
};
pub use idx::{load_idx_labels, load_idx_raw_images, load_mnist, mnist_paths, MNIST_PAD_SIZE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Supervision for one batch.
#[derive(Clone, Debug)]
pub enum Targets<T: Scalar> {
    /// Regression targets, shape `(B, 1, 1, 1)`.
    Values(Tensor<T>),
    /// Class indices.
    Labels(Vec<usize>),
}

/// One batch of single-channel images plus targets.
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    pub images: Tensor<T>,
    pub targets: Targets<T>,
}

/// Per-sample supervision of a stored dataset.
#[derive(Clone, Debug)]
pub enum DatasetTargets<T: Scalar> {
    Values(Vec<T>),
    Labels(Vec<u8>),
}

/// A finite, fully materialized dataset of square single-channel images.
#[derive(Clone, Debug)]
pub struct Dataset<T: Scalar> {
    size: usize,
    images: Vec<T>,
    targets: DatasetTargets<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_parts(size: usize, images: Vec<T>, targets: DatasetTargets<T>) -> Result<Self> {
        let n = match &targets {
            DatasetTargets::Values(v) => v.len(),
            DatasetTargets::Labels(l) => l.len(),
        };
        if size == 0 || images.len() != n * size * size {
            return Err(Error::invalid(
                "dataset",
                format!(
                    "{} image scalars for {n} targets of {size}x{size}",
                    images.len()
                ),
            ));
        }
        Ok(Dataset {
            size,
            images,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        match &self.targets {
            DatasetTargets::Values(v) => v.len(),
            DatasetTargets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    pub fn targets(&self) -> &DatasetTargets<T> {
        &self.targets
    }

    /// The raw plane of sample `i`.
    pub fn image(&self, i: usize) -> &[T] {
        let plane = self.size * self.size;
        &self.images[i * plane..(i + 1) * plane]
    }

    /// Keeps the first `n` samples.
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.images.truncate(n * self.size * self.size);
        match &mut self.targets {
            DatasetTargets::Values(v) => v.truncate(n),
            DatasetTargets::Labels(l) => l.truncate(n),
        }
        self
    }

    /// Assembles the given samples into a batch, in the given order.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch<T>> {
        if indices.is_empty() {
            return Err(Error::invalid("dataset_batch", "empty batch"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(
                "dataset_batch",
                format!("index {bad} out of range for {} samples", self.len()),
            ));
        }
        let plane = self.size * self.size;
        let mut images = Vec::with_capacity(indices.len() * plane);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        let images = Tensor::new(Shape::new(indices.len(), 1, self.size, self.size), images)?;
        let targets = match &self.targets {
            DatasetTargets::Values(v) => Targets::Values(Tensor::new(
                Shape::new(indices.len(), 1, 1, 1),
                indices.iter().map(|&i| v[i]).collect(),
            )?),
            DatasetTargets::Labels(l) => {
                Targets::Labels(indices.iter().map(|&i| l[i] as usize).collect())
            }
        };
        Ok(Batch { images, targets })
    }
}

/// A source of training batches.
pub trait BatchStream<T: Scalar> {
    fn next_batch(&mut self, batch: usize) -> Result<Batch<T>>;
}

/// Epoch-shuffled passes over a finite dataset; partial tail batches are
/// dropped, so every delivered batch has exactly `batch` samples.
pub struct ShuffledStream<'a, T: Scalar> {
    data: &'a Dataset<T>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> ShuffledStream<'a, T> {
    pub fn new(data: &'a Dataset<T>, seed: u64) -> Self {
        let mut s = ShuffledStream {
            data,
            order: (0..data.len()).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }
}

impl<T: Scalar> BatchStream<T> for ShuffledStream<'_, T> {
    fn next_batch(&mut self, batch: usize) -> Result<Batch<T>> {
        if batch == 0 || batch > self.data.len() {
            return Err(Error::invalid(
                "shuffled_stream",
                format!("batch size {batch} for {} samples", self.data.len()),
            ));
        }
        if self.pos + batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let picks = &self.order[self.pos..self.pos + batch];
        self.pos += batch;
        self.data.batch(picks)
    }
}
