use std::thread;

use super::{
    run_client, serve, ClientOutcome, ClientState, DataSource, FederationError, LocalTraining, Mode, RoundRecord, RunConfig,
    TransportKind,
};
use crate::crypto::SecretKey;
use crate::data::{load_cifar10_binary, load_idx, partition_random, synth_generate, Dataset, Partition};
use crate::model::{ModelParams, Sample};
use crate::numerics::{Rng, Seed};
use crate::transport::{loopback_pair, socket_connect, Endpoint, SocketListener};

/// Training set, test set and the client split, all derived from the run seed.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
}

impl FederatedData {
    pub fn client_samples(&self, client_id: u32) -> Vec<Sample> {
        self.train.select(self.partition.indices(client_id))
    }
}

pub fn prepare_data(cfg: &RunConfig) -> Result<FederatedData, FederationError> {
    let master = Seed::from_u64(cfg.seed);
    let k = cfg.model.num_classes;
    let (train, test) = match &cfg.data {
        DataSource::Synthetic { per_client, test_size } => (
            synth_generate(&master.derive("data/train"), cfg.clients * per_client, &cfg.model, k),
            synth_generate(&master.derive("data/test"), *test_size, &cfg.model, k),
        ),
        DataSource::Cifar10 { train, test, .. } => (load_cifar10_binary(train)?, load_cifar10_binary(test)?),
        DataSource::Idx { train_images, train_labels, test_images, test_labels, .. } => {
            (load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?)
        }
    };
    train.check_config(&cfg.model)?;
    test.check_config(&cfg.model)?;
    let partition = partition_random(&train, cfg.clients, cfg.data.per_client(), &master.derive("data/partition"))?;
    Ok(FederatedData { train, test, partition })
}

/// The round-0 global model as the initializer hands it to the server:
/// encrypted with `key` in encrypted mode, plaintext otherwise.
pub fn initial_model(cfg: &RunConfig, key: Option<&SecretKey>) -> Result<ModelParams, FederationError> {
    let mut rng = Rng::stream(&Seed::from_u64(cfg.seed), "model/init");
    let plain = ModelParams::init(&cfg.model, &mut rng);
    Ok(match mode_key(cfg, key)? {
        Some(k) => k.encrypt_model(&plain)?,
        None => plain,
    })
}

/// The key to use in `cfg.mode`, after checking it fits the model.
fn mode_key<'a>(cfg: &RunConfig, key: Option<&'a SecretKey>) -> Result<Option<&'a SecretKey>, FederationError> {
    match (cfg.mode, key) {
        (Mode::Plain, _) => Ok(None),
        (Mode::Encrypted, None) => Err(FederationError::Config("encrypted mode needs a secret key".into())),
        (Mode::Encrypted, Some(k)) => {
            if k.patch_len() != cfg.model.patch_len() || k.num_patches() != cfg.model.num_patches() {
                return Err(FederationError::Config(format!(
                    "key is for L={}, N={} but the model has L={}, N={}",
                    k.patch_len(),
                    k.num_patches(),
                    cfg.model.patch_len(),
                    cfg.model.num_patches()
                )));
            }
            Ok(Some(k))
        }
    }
}

/// State for client `client_id`, with its own shuffling stream.
pub fn client_state(
    cfg: &RunConfig,
    data: &FederatedData,
    key: Option<&SecretKey>,
    client_id: u32,
) -> Result<ClientState, FederationError> {
    let key = mode_key(cfg, key)?.cloned();
    let rng = Rng::stream(&Seed::from_u64(cfg.seed).derive_indexed("client", client_id as u64), "client/shuffle");
    let training = LocalTraining {
        strategy: cfg.strategy,
        lr: cfg.lr,
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
    };
    Ok(ClientState::new(client_id, key, data.client_samples(client_id), cfg.model, training, rng))
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub records: Vec<RoundRecord>,
    /// Final global model, decrypted.
    pub final_model: ModelParams,
    /// Test accuracy of `final_model`.
    pub final_accuracy: f64,
}

/// Generates data and the initial model from `cfg`, then runs the federation.
pub fn run_simulation(cfg: &RunConfig, key: Option<&SecretKey>) -> Result<SimulationOutcome, FederationError> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let initial = initial_model(cfg, key)?;
    run_simulation_from(cfg, key, &data, initial)
}

/// Runs server and `cfg.clients` client threads in this process over the
/// configured carrier. Client 0 evaluates on the test set.
pub fn run_simulation_from(
    cfg: &RunConfig,
    key: Option<&SecretKey>,
    data: &FederatedData,
    initial: ModelParams,
) -> Result<SimulationOutcome, FederationError> {
    cfg.validate()?;
    let key = mode_key(cfg, key)?;
    if initial.encrypted != key.is_some() {
        return Err(FederationError::Config(format!(
            "initial model is {} but the run is in {} mode",
            if initial.encrypted { "encrypted" } else { "plaintext" },
            cfg.mode
        )));
    }
    let states = (0..cfg.clients as u32).map(|id| client_state(cfg, data, key, id)).collect::<Result<Vec<_>, _>>()?;

    thread::scope(|scope| {
        let client_run = |id: u32, ep: Endpoint, st: ClientState| {
            let test = (id == 0).then_some(data.test.samples.as_slice());
            run_client(ep, st, cfg.rounds, test)
        };
        let mut handles = Vec::new();
        let served = match cfg.transport.kind {
            TransportKind::Loopback => {
                let mut server_eps = Vec::new();
                for (id, st) in (0u32..).zip(states) {
                    let (c, s) = loopback_pair();
                    server_eps.push(s);
                    handles.push(scope.spawn(move || client_run(id, c, st)));
                }
                serve(server_eps, initial, cfg.strategy, cfg.lr, cfg.rounds)
            }
            TransportKind::Socket => {
                let listener = SocketListener::bind(cfg.transport.addr.as_str())?;
                let addr = listener.local_addr();
                for (id, st) in (0u32..).zip(states) {
                    handles.push(scope.spawn(move || {
                        let ep = socket_connect(addr)?;
                        client_run(id, ep, st)
                    }));
                }
                let mut server_eps = Vec::new();
                let mut accepted = Ok(());
                for _ in 0..cfg.clients {
                    match listener.accept() {
                        Ok(ep) => server_eps.push(ep),
                        Err(e) => {
                            accepted = Err(e);
                            break;
                        }
                    }
                }
                drop(listener);
                match accepted {
                    Ok(()) => serve(server_eps, initial, cfg.strategy, cfg.lr, cfg.rounds),
                    Err(e) => Err(FederationError::Aborted { last_completed_round: None, source: Box::new(e.into()) }),
                }
            }
        };
        let clients: Vec<Result<ClientOutcome, FederationError>> =
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect();
        finish(served, clients)
    })
}

fn finish(
    served: Result<super::ServerOutcome, FederationError>,
    clients: Vec<Result<ClientOutcome, FederationError>>,
) -> Result<SimulationOutcome, FederationError> {
    let served = match served {
        Ok(s) => s,
        Err(FederationError::Aborted { last_completed_round, source }) => {
            // A client's own failure explains the abort better than the closed connection it caused.
            let cause = clients
                .into_iter()
                .filter_map(Result::err)
                .find(|e| !matches!(e, FederationError::Transport(_)))
                .map_or(source, Box::new);
            return Err(FederationError::Aborted { last_completed_round, source: cause });
        }
        Err(e) => return Err(e),
    };
    let last = served.records.last().map(|r| r.round);
    let mut outcomes = Vec::with_capacity(clients.len());
    for c in clients {
        match c {
            Ok(o) => outcomes.push(o),
            Err(e) => return Err(FederationError::Aborted { last_completed_round: last, source: Box::new(e) }),
        }
    }
    let evaluator = outcomes.swap_remove(0);
    Ok(SimulationOutcome {
        records: served.records,
        final_model: evaluator.final_model,
        final_accuracy: evaluator.final_accuracy.unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::Strategy;
    use crate::model::ModelConfig;

    fn small(mode: Mode, strategy: Strategy, rounds: u32) -> RunConfig {
        RunConfig {
            mode,
            strategy,
            clients: 3,
            rounds,
            seed: 11,
            model: ModelConfig { image_h: 8, image_w: 8, channels: 1, patch_size: 4, embed_dim: 8, num_classes: 3, hidden_dim: 16 },
            data: DataSource::Synthetic { per_client: 12, test_size: 30 },
            ..RunConfig::default()
        }
    }

    #[test]
    fn partitions_are_disjoint_and_sized() {
        let cfg = small(Mode::Plain, Strategy::FedSgd, 1);
        let d = prepare_data(&cfg).unwrap();
        assert!(d.partition.is_disjoint());
        for id in 0..3 {
            assert_eq!(d.partition.indices(id).len(), 12);
        }
    }

    #[test]
    fn zero_rounds_returns_initial_model() {
        let cfg = small(Mode::Plain, Strategy::FedSgd, 0);
        let out = run_simulation(&cfg, None).unwrap();
        assert!(out.records.is_empty());
        assert!(out.final_model.layers.bit_eq(&initial_model(&cfg, None).unwrap().layers));
        assert!(out.final_accuracy.is_finite());
    }

    #[test]
    fn encrypted_mode_without_key_is_a_config_error() {
        let cfg = small(Mode::Encrypted, Strategy::FedSgd, 1);
        assert!(matches!(run_simulation(&cfg, None), Err(FederationError::Config(_))));
    }

    #[test]
    fn records_have_one_loss_per_client() {
        let cfg = small(Mode::Plain, Strategy::FedAvg, 2);
        let out = run_simulation(&cfg, None).unwrap();
        assert_eq!(out.records.len(), 2);
        for (t, r) in out.records.iter().enumerate() {
            assert_eq!(r.round, t as u32);
            assert_eq!(r.losses.len(), 3);
            assert!(r.accuracy.is_finite());
        }
        assert_eq!(out.records[1].accuracy, out.final_accuracy);
    }
}
