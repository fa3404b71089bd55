use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FederationError;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plain,
    Encrypted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Clients send mean gradients; the server takes one step.
    FedSgd,
    /// Clients train locally and send parameters; the server averages.
    FedAvg,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Plain => "plain",
            Mode::Encrypted => "encrypted",
        })
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::FedSgd => "fedsgd",
            Strategy::FedAvg => "fedavg",
        })
    }
}

/// Where training and test images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        per_client: usize,
        test_size: usize,
    },
    Cifar10 {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        per_client: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        per_client: usize,
    },
}

impl DataSource {
    pub fn per_client(&self) -> usize {
        match self {
            DataSource::Synthetic { per_client, .. }
            | DataSource::Cifar10 { per_client, .. }
            | DataSource::Idx { per_client, .. } => *per_client,
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataSource::Synthetic { .. } => {}
            DataSource::Cifar10 { train, test, .. } => train.iter_mut().chain(test.iter_mut()).for_each(fix),
            DataSource::Idx { train_images, train_labels, test_images, test_labels, .. } => {
                [train_images, train_labels, test_images, test_labels].into_iter().for_each(fix)
            }
        }
    }
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { per_client: 100, test_size: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Loopback,
    Socket,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub kind: TransportKind,
    /// Listen address for the socket carrier; port 0 picks a free port.
    pub addr: String,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { kind: TransportKind::Loopback, addr: "127.0.0.1:0".into() }
    }
}

/// A federated training run, as read from a TOML file.
///
/// ```toml
/// mode = "encrypted"
/// strategy = "fedsgd"
/// clients = 5
/// rounds = 20
/// lr = 0.1
/// seed = 7
///
/// [model]
/// embed_dim = 32
///
/// [data]
/// source = "synthetic"
/// per_client = 100
/// test_size = 500
///
/// [transport]
/// kind = "loopback"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub strategy: Strategy,
    pub clients: usize,
    pub rounds: u32,
    pub lr: f64,
    pub seed: u64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub model: ModelConfig,
    pub data: DataSource,
    pub transport: TransportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Plain,
            strategy: Strategy::FedSgd,
            clients: 5,
            rounds: 20,
            lr: 0.1,
            seed: 0,
            local_epochs: 1,
            batch_size: 8,
            model: ModelConfig::default(),
            data: DataSource::default(),
            transport: TransportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, FederationError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| FederationError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, FederationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FederationError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| FederationError::Config(format!("{}: {e}", path.display())))?;
        cfg.data.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        self.model.validate().map_err(|e| FederationError::Config(e.to_string()))?;
        let fail = |m: &str| Err(FederationError::Config(m.to_string()));
        if self.clients == 0 {
            return fail("clients must be at least 1");
        }
        if self.clients > u32::MAX as usize - 1 {
            return fail("too many clients");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("lr must be a positive finite number");
        }
        if self.data.per_client() == 0 {
            return fail("per_client must be at least 1");
        }
        if self.strategy == Strategy::FedAvg && (self.local_epochs == 0 || self.batch_size == 0) {
            return fail("fedavg needs local_epochs >= 1 and batch_size >= 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let cfg = RunConfig::from_toml("mode = \"encrypted\"\nseed = 3\n[model]\nembed_dim = 16\n").unwrap();
        assert_eq!(cfg.mode, Mode::Encrypted);
        assert_eq!(cfg.rounds, 20);
        assert_eq!(cfg.lr, 0.1);
        assert_eq!(cfg.model.embed_dim, 16);
        assert_eq!(cfg.model.patch_size, 8);
        assert_eq!(cfg.data, DataSource::Synthetic { per_client: 100, test_size: 500 });
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig {
            strategy: Strategy::FedAvg,
            data: DataSource::Cifar10 { train: vec!["a.bin".into()], test: vec!["t.bin".into()], per_client: 10 },
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("modee = \"plain\"").is_err());
        assert!(RunConfig::from_toml("clients = 0").is_err());
        assert!(RunConfig::from_toml("lr = -1.0").is_err());
        assert!(RunConfig::from_toml("strategy = \"fedprox\"").is_err());
    }
}
