use std::fmt;
use std::path::Path;

use evfl::federation::{FederationError, Mode, RunConfig};
use evfl::model::ModelConfig;
use evfl::{SecretKey, Seed};

use crate::ModeArg;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, paths or input files.
    Usage(String),
    /// The run started but could not finish.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<FederationError> for CliError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::Config(_) | FederationError::Data(_) | FederationError::Crypto(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub fn usage(msg: impl fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

/// Decimal `u64`, or exactly 64 hex digits for a full 256-bit seed.
pub fn parse_seed(text: &str) -> Result<Seed, CliError> {
    let t = text.trim();
    if t.len() == 64 && t.bytes().all(|b| b.is_ascii_hexdigit()) {
        let mut bytes = [0u8; 32];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = u8::from_str_radix(&t[2 * i..2 * i + 2], 16).expect("checked hex digits");
        }
        return Ok(Seed(bytes));
    }
    t.parse::<u64>()
        .map(Seed::from_u64)
        .map_err(|_| usage(format!("seed {text:?} is neither a u64 nor 64 hex digits")))
}

pub fn load_run_config(path: &Path, mode: Option<ModeArg>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(m) = mode {
        cfg.mode = match m {
            ModeArg::Plain => Mode::Plain,
            ModeArg::Encrypted => Mode::Encrypted,
        };
    }
    Ok(cfg)
}

/// Loads a key file and checks it fits `cfg`.
pub fn load_key(path: &Path, cfg: &ModelConfig) -> Result<SecretKey, CliError> {
    let key = SecretKey::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if key.patch_len() != cfg.patch_len() || key.num_patches() != cfg.num_patches() {
        return Err(usage(format!(
            "{}: key is for L={}, N={} but the model has L={}, N={}",
            path.display(),
            key.patch_len(),
            key.num_patches(),
            cfg.patch_len(),
            cfg.num_patches()
        )));
    }
    Ok(key)
}

pub fn key_id_hex(key: &SecretKey) -> String {
    format!("{:016x}", key.key_id())
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_and_hex_seeds() {
        assert_eq!(parse_seed("42").unwrap(), Seed::from_u64(42));
        let hex = "00".repeat(31) + "ff";
        assert_eq!(parse_seed(&hex).unwrap().0[31], 0xff);
        assert!(parse_seed("0x12").is_err());
        assert!(parse_seed(&"g".repeat(64)).is_err());
    }
}
