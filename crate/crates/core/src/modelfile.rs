//! `FVW1` model files.
//!
//! ```text
//! [4]    magic "FVW1"
//! u8     version (1)
//! u32×7  image_h image_w channels patch_size embed_dim num_classes hidden_dim
//! u8     encrypted flag
//! u16    tensor count (7)
//! tensors, same layout as on the wire, named e_pat … head_b2
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::codec::{put_tensor, read_tensor, Cursor, TensorRead, Truncated};
use crate::model::{Layers, ModelConfig, ModelParams, PARAM_NAMES};

const MAGIC: &[u8; 4] = b"FVW1";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn truncated(t: Truncated) -> ModelFileError {
    ModelFileError::Format(format!("truncated at byte {}", t.offset))
}

pub fn to_bytes(cfg: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [cfg.image_h, cfg.image_w, cfg.channels, cfg.patch_size, cfg.embed_dim, cfg.num_classes, cfg.hidden_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(params.encrypted as u8);
    out.extend_from_slice(&(PARAM_NAMES.len() as u16).to_le_bytes());
    for (name, t) in PARAM_NAMES.iter().zip(params.layers.tensors()) {
        put_tensor(&mut out, name, t);
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelConfig, ModelParams), ModelFileError> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4).map_err(truncated)? != MAGIC {
        return Err(ModelFileError::Format("bad magic, expected FVW1".into()));
    }
    let version = cur.u8().map_err(truncated)?;
    if version != VERSION {
        return Err(ModelFileError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = cur.u32().map_err(truncated)? as usize;
    }
    let [image_h, image_w, channels, patch_size, embed_dim, num_classes, hidden_dim] = dims;
    let cfg = ModelConfig { image_h, image_w, channels, patch_size, embed_dim, num_classes, hidden_dim };
    cfg.validate().map_err(|e| ModelFileError::Format(e.to_string()))?;
    let encrypted = match cur.u8().map_err(truncated)? {
        0 => false,
        1 => true,
        v => return Err(ModelFileError::Format(format!("encrypted flag {v}"))),
    };
    let count = cur.u16().map_err(truncated)? as usize;
    if count != PARAM_NAMES.len() {
        return Err(ModelFileError::Format(format!("{count} tensors, expected {}", PARAM_NAMES.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for expected in PARAM_NAMES {
        match read_tensor(&mut cur) {
            TensorRead::Ok(name, m) if name == expected => tensors.push(m),
            TensorRead::Ok(name, _) => {
                return Err(ModelFileError::Format(format!("tensor {name} where {expected} was expected")))
            }
            TensorRead::Truncated(t) => return Err(truncated(t)),
            TensorRead::Invalid(m) => return Err(ModelFileError::Format(m)),
        }
    }
    if cur.remaining() != 0 {
        return Err(ModelFileError::Format(format!("{} trailing bytes", cur.remaining())));
    }
    let layers = Layers::from_tensors(tensors.try_into().expect("seven tensors"));
    if !layers.matches_config(&cfg) {
        return Err(ModelFileError::Format("tensor shapes do not match the stored config".into()));
    }
    Ok((cfg, ModelParams { layers, encrypted }))
}

pub fn save(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<(), ModelFileError> {
    fs::write(path, to_bytes(cfg, params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelConfig, ModelParams), ModelFileError> {
    from_bytes(&fs::read(path)?)
}
