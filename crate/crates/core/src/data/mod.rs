//! Datasets, client partitioning and image export.

mod idx;
mod cifar;
mod partition;
mod pnm;
mod synth;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::{ModelConfig, Sample};

pub use cifar::load_cifar10_binary;
pub use idx::load_idx;
pub use partition::{partition_random, Partition};
pub use pnm::write_image;
pub use synth::synth_generate;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("need {needed} samples for partitioning but dataset has {available}")]
    Insufficient { needed: usize, available: usize },
    #[error("dataset {name} has images {got:?} (h, w, c), model expects {expected:?}")]
    Shape { name: String, expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        DataError::Format { path: path.into(), message: message.into() }
    }
}

/// An in-memory labeled image collection; all images share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks that every image and label fits `cfg`.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<(), DataError> {
        let expected = (cfg.image_h, cfg.image_w, cfg.channels);
        if let Some(s) = self.samples.iter().find(|s| s.image.dims() != expected) {
            return Err(DataError::Shape { name: self.name.clone(), expected, got: s.image.dims() });
        }
        if let Some(s) = self.samples.iter().find(|s| s.label >= cfg.num_classes) {
            return Err(DataError::format(
                &self.name,
                format!("label {} exceeds the model's {} classes", s.label, cfg.num_classes),
            ));
        }
        Ok(())
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Vec<Sample> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }
}
