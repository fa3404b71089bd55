//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3072 pixel bytes stored as three 32×32 planes (R, G, B).

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};
use crate::model::{Image, Sample};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const RECORD: usize = 1 + 3 * PLANE;

pub(crate) fn parse_cifar10(path: &Path, bytes: &[u8], out: &mut Vec<Sample>) -> Result<(), DataError> {
    if bytes.len() % RECORD != 0 {
        let offset = bytes.len() / RECORD * RECORD;
        return Err(DataError::format(
            path,
            format!("truncated record at offset {offset}: file length {} is not a multiple of {RECORD}", bytes.len()),
        ));
    }
    for (r, record) in bytes.chunks_exact(RECORD).enumerate() {
        let label = record[0] as usize;
        if label > 9 {
            return Err(DataError::format(path, format!("record {r} (offset {}): label {label} > 9", r * RECORD)));
        }
        let planes = &record[1..];
        let mut pixels = Vec::with_capacity(3 * PLANE);
        for i in 0..PLANE {
            for c in 0..3 {
                pixels.push(planes[c * PLANE + i] as f64 / 255.0);
            }
        }
        out.push(Sample { image: Image::new(SIDE, SIDE, 3, pixels), label });
    }
    Ok(())
}

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset, DataError> {
    let mut samples = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| DataError::io(p, e))?;
        parse_cifar10(p, &bytes, &mut samples)?;
    }
    Ok(Dataset { samples, num_classes: 10, name: "cifar10".into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_plane_layout() {
        let mut bytes = vec![0u8; 2 * RECORD];
        bytes[0] = 3;
        bytes[1] = 255; // R of pixel (0,0)
        bytes[1 + PLANE + 1] = 51; // G of pixel (0,1)
        bytes[RECORD] = 9;
        bytes[RECORD + 1 + 2 * PLANE + SIDE] = 102; // B of pixel (1,0)
        let mut out = Vec::new();
        parse_cifar10(Path::new("mem"), &bytes, &mut out).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].label, 3);
        assert_eq!(out[0].image.get(0, 0, 0), 1.0);
        assert_eq!(out[0].image.get(0, 1, 1), 0.2);
        assert_eq!(out[1].label, 9);
        assert_eq!(out[1].image.get(1, 0, 2), 0.4);
        assert_eq!(out[1].image.get(0, 0, 0), 0.0);
    }

    #[test]
    fn empty_is_valid() {
        let mut out = Vec::new();
        parse_cifar10(Path::new("mem"), &[], &mut out).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn truncated_names_offset() {
        let bytes = vec![0u8; RECORD + 100];
        let err = parse_cifar10(Path::new("mem"), &bytes, &mut Vec::new()).unwrap_err();
        assert!(err.to_string().contains("offset 3073"), "{err}");
    }

    #[test]
    fn bad_label() {
        let mut bytes = vec![0u8; RECORD];
        bytes[0] = 10;
        assert!(parse_cifar10(Path::new("mem"), &bytes, &mut Vec::new()).is_err());
    }
}
