//! IDX (MNIST-style) image/label file pairs, big-endian headers.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};
use crate::model::{Image, Sample};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(path: &Path, bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::format(path, format!("header truncated at offset {at}")))
}

pub(crate) fn parse_idx(images_path: &Path, images: &[u8], labels_path: &Path, labels: &[u8]) -> Result<Dataset, DataError> {
    let magic = be_u32(images_path, images, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::format(images_path, format!("magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let magic = be_u32(labels_path, labels, 0)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::format(labels_path, format!("magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(images_path, images, 4)? as usize;
    let rows = be_u32(images_path, images, 8)? as usize;
    let cols = be_u32(images_path, images, 12)? as usize;
    let label_count = be_u32(labels_path, labels, 4)? as usize;
    if count != label_count {
        return Err(DataError::format(labels_path, format!("{label_count} labels for {count} images")));
    }
    let pixels = &images[16..];
    let per_image = rows * cols;
    if pixels.len() != count * per_image {
        return Err(DataError::format(
            images_path,
            format!("expected {} pixel bytes, found {}", count * per_image, pixels.len()),
        ));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() != count {
        return Err(DataError::format(labels_path, format!("expected {count} label bytes, found {}", label_bytes.len())));
    }
    let samples: Vec<Sample> = pixels
        .chunks_exact(per_image.max(1))
        .take(count)
        .zip(label_bytes)
        .map(|(px, &label)| Sample {
            image: Image::new(rows, cols, 1, px.iter().map(|&b| b as f64 / 255.0).collect()),
            label: label as usize,
        })
        .collect();
    let num_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0).max(2);
    Ok(Dataset { samples, num_classes, name: "idx".into() })
}

/// Loads a grayscale dataset from an IDX images file and its labels file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let ib = fs::read(images).map_err(|e| DataError::io(images, e))?;
    let lb = fs::read(labels).map_err(|e| DataError::io(labels, e))?;
    parse_idx(images, &ib, labels, &lb)
}

#[cfg(test)]
pub(crate) fn fixture(count: u32, rows: u32, cols: u32, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    for v in [IMAGES_MAGIC, count, rows, cols] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend((0..count * rows * cols).map(|i| (i * 37 % 256) as u8));
    let mut lab = Vec::new();
    for v in [LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}
