//! Labelled image datasets, their on-disk formats, and per-epoch subset sampling.

mod cifar;
mod idx;
mod sampler;
mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cifar::{load_cifar10, load_cifar10_dir};
pub use idx::{load_idx, load_mnist_dir, parse_idx_images, parse_idx_labels};
pub use sampler::{batches, sample_subset, subset_size};
pub use synthetic::{synthetic_task, SyntheticTask};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `channels × height × width` of one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// Images in `[0, 1]`, stored sample-major as `count × C × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<u8>,
    shape: ImageShape,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<u8>,
        shape: ImageShape,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::input("image shape must be non-empty"));
        }
        if images.len() != labels.len() * shape.len() {
            return Err(Error::input(format!(
                "{} pixel values do not hold {} images of shape {shape}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::input(format!("label {bad} out of range for {classes} classes")));
        }
        if let Some(bad) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            shape,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.shape.len();
        &self.images[index * n..(index + 1) * n]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    /// Gathers the given samples into an `N×C×H×W` tensor and their labels.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let n = self.shape.len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| S::lit(v as f64)));
        }
        let s = self.shape;
        let tensor = Tensor::from_vec(&[indices.len(), s.channels, s.height, s.width], data)
            .expect("batch shape");
        (tensor, indices.iter().map(|&i| self.label(i)).collect())
    }
}
