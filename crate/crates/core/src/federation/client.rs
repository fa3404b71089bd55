use super::{ClientUpdate, FederationError, Strategy};
use crate::crypto::SecretKey;
use crate::model::{accuracy, apply_sgd, batch_gradient, domain_name, GradientUpdate, ModelConfig, ModelParams, Sample};
use crate::numerics::Rng;
use crate::transport::{Endpoint, MessageType, Metrics, RoundMessage};

/// Training hyperparameters shared by all clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub strategy: Strategy,
    pub lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

/// One client: its data, its copy of the key, and a plaintext local model.
#[derive(Debug)]
pub struct ClientState {
    client_id: u32,
    /// `None` in plain mode.
    key: Option<SecretKey>,
    local: ModelParams,
    samples: Vec<Sample>,
    round: u32,
    rng: Rng,
    cfg: ModelConfig,
    training: LocalTraining,
}

impl ClientState {
    pub fn new(
        client_id: u32,
        key: Option<SecretKey>,
        samples: Vec<Sample>,
        cfg: ModelConfig,
        training: LocalTraining,
        rng: Rng,
    ) -> Self {
        Self { client_id, key, local: ModelParams::zeros(&cfg), samples, round: 0, rng, cfg, training }
    }

    pub fn client_id(&self) -> u32 {
        self.client_id
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Plaintext model from the last step (trained parameters under FedAvg).
    pub fn local(&self) -> &ModelParams {
        &self.local
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Decrypts a global model if this client holds a key; plain models pass through.
    pub fn open(&self, global: &ModelParams) -> Result<ModelParams, FederationError> {
        match (&self.key, global.encrypted) {
            (Some(k), true) => Ok(k.decrypt_model(global)?),
            (None, false) => Ok(global.clone()),
            (Some(_), false) => Err(FederationError::DomainMixing { global: domain_name(false), update: domain_name(true) }),
            (None, true) => Err(FederationError::DomainMixing { global: domain_name(true), update: domain_name(false) }),
        }
    }

    fn seal_grad(&self, g: GradientUpdate) -> Result<GradientUpdate, FederationError> {
        Ok(match &self.key {
            Some(k) => k.encrypt_grad(&g)?,
            None => g,
        })
    }

    fn seal_params(&self, p: &ModelParams) -> Result<ModelParams, FederationError> {
        Ok(match &self.key {
            Some(k) => k.encrypt_model(p)?,
            None => p.clone(),
        })
    }

    /// Trains on the local partition starting from `global` and returns the
    /// outbound update together with the mean training loss.
    ///
    /// FedSGD: mean gradient over the whole partition at `global`, not applied.
    /// FedAvg: `local_epochs` passes of minibatch SGD over a fresh shuffle.
    pub fn client_local_step(&mut self, global: &ModelParams, round: u32) -> Result<(ClientUpdate, f64), FederationError> {
        if round != self.round {
            return Err(FederationError::StaleRound { expected: self.round, got: round });
        }
        let plain = self.open(global)?;
        let out = match self.training.strategy {
            Strategy::FedSgd => {
                let refs: Vec<&Sample> = self.samples.iter().collect();
                let (loss, layers) = batch_gradient(&refs, &plain, &self.cfg)?;
                self.local = plain;
                let g = GradientUpdate { layers, round, client_id: self.client_id, encrypted: false };
                (ClientUpdate::Gradients(self.seal_grad(g)?), loss)
            }
            Strategy::FedAvg => {
                let (trained, loss) = self.train_epochs(plain)?;
                let params = self.seal_params(&trained)?;
                self.local = trained;
                (ClientUpdate::Params { params, round, client_id: self.client_id }, loss)
            }
        };
        self.round += 1;
        Ok(out)
    }

    fn train_epochs(&mut self, mut params: ModelParams) -> Result<(ModelParams, f64), FederationError> {
        let n = self.samples.len();
        let b = self.training.batch_size.max(1);
        let mut order: Vec<usize> = (0..n).collect();
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for _ in 0..self.training.local_epochs {
            for i in (1..n).rev() {
                let j = self.rng.below(i + 1);
                order.swap(i, j);
            }
            for chunk in order.chunks(b) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &self.samples[i]).collect();
                let (loss, layers) = batch_gradient(&batch, &params, &self.cfg)?;
                params = apply_sgd(&params, &GradientUpdate::plain(layers), self.training.lr)?;
                loss_sum += loss;
                steps += 1;
            }
        }
        Ok((params, if steps == 0 { 0.0 } else { loss_sum / steps as f64 }))
    }
}

/// What a client ends up with after the run.
#[derive(Debug, Clone)]
pub struct ClientOutcome {
    /// Final global model, decrypted.
    pub final_model: ModelParams,
    pub final_accuracy: Option<f64>,
}

/// Runs one client to completion over `endpoint`.
///
/// When `test` is given this client acts as evaluator and reports the test
/// accuracy of every global model it receives.
pub fn run_client(
    mut endpoint: Endpoint,
    mut state: ClientState,
    rounds: u32,
    test: Option<&[Sample]>,
) -> Result<ClientOutcome, FederationError> {
    endpoint.send(&RoundMessage::register(state.client_id))?;
    let mut outcome = None;
    loop {
        let msg = endpoint.recv()?;
        match msg.msg_type {
            MessageType::GlobalModel => {
                let global = msg.model_params()?;
                let plain = state.open(&global)?;
                let acc = match test {
                    Some(t) => Some(accuracy(t, &plain, &state.cfg)?),
                    None => None,
                };
                let metrics = |loss| Metrics { loss, accuracy: acc.unwrap_or(-1.0) };
                if msg.round < rounds {
                    let (update, loss) = state.client_local_step(&global, msg.round)?;
                    let reply = match update {
                        ClientUpdate::Gradients(g) => RoundMessage::grad_update(&g, metrics(loss)),
                        ClientUpdate::Params { params, round, client_id } => {
                            RoundMessage::params_update(round, client_id, &params, metrics(loss))
                        }
                    };
                    endpoint.send(&reply)?;
                } else if msg.round == rounds && state.round == rounds {
                    endpoint.send(&RoundMessage::round_complete(rounds, state.client_id, metrics(-1.0)))?;
                    outcome = Some(ClientOutcome { final_model: plain, final_accuracy: acc });
                } else {
                    return Err(FederationError::StaleRound { expected: state.round, got: msg.round });
                }
            }
            MessageType::Shutdown => {
                return outcome.ok_or_else(|| FederationError::Protocol("shutdown before the final model arrived".into()));
            }
            other => return Err(FederationError::Protocol(format!("client {} got unexpected {other:?}", state.client_id))),
        }
    }
}
