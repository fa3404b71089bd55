use std::collections::BTreeMap;
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use super::{ClientUpdate, FederationError, RoundRecord, Strategy};
use crate::model::{domain_name, GradientUpdate, Layers, ModelParams};
use crate::transport::{Endpoint, MessageSink, MessageType, RoundMessage, TransportError};

/// Aggregator state. There is deliberately no place to keep a key.
#[derive(Debug, Clone)]
pub struct ServerState {
    global: ModelParams,
    round: u32,
    strategy: Strategy,
    lr: f64,
    expected_clients: usize,
    received: BTreeMap<u32, ClientUpdate>,
}

impl ServerState {
    pub fn new(global: ModelParams, strategy: Strategy, lr: f64, expected_clients: usize) -> Self {
        Self { global, round: 0, strategy, lr, expected_clients, received: BTreeMap::new() }
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn expected_clients(&self) -> usize {
        self.expected_clients
    }

    /// Buffers one update for the current round; returns true once the quorum is complete.
    pub fn submit(&mut self, update: ClientUpdate) -> Result<bool, FederationError> {
        if update.round() != self.round {
            return Err(FederationError::StaleRound { expected: self.round, got: update.round() });
        }
        let kind_ok = matches!(
            (&update, self.strategy),
            (ClientUpdate::Gradients(_), Strategy::FedSgd) | (ClientUpdate::Params { .. }, Strategy::FedAvg)
        );
        if !kind_ok {
            return Err(FederationError::Protocol(format!(
                "client {} sent the wrong update kind for {}",
                update.client_id(),
                self.strategy
            )));
        }
        check_domain(self.global.encrypted, update.encrypted())?;
        if self.received.len() >= self.expected_clients {
            return Err(FederationError::Protocol(format!("more than {} updates in round {}", self.expected_clients, self.round)));
        }
        let id = update.client_id();
        if self.received.insert(id, update).is_some() {
            return Err(FederationError::Protocol(format!("duplicate update from client {id} in round {}", self.round)));
        }
        Ok(self.received.len() == self.expected_clients)
    }

    /// Aggregates the buffered quorum (in client id order) and advances the round.
    pub fn aggregate(&mut self) -> Result<(), FederationError> {
        if self.received.len() != self.expected_clients {
            return Err(FederationError::Protocol(format!(
                "round {} has {} of {} updates",
                self.round,
                self.received.len(),
                self.expected_clients
            )));
        }
        let received = std::mem::take(&mut self.received);
        match self.strategy {
            Strategy::FedSgd => {
                let grads: Vec<GradientUpdate> = received
                    .into_values()
                    .map(|u| match u {
                        ClientUpdate::Gradients(g) => g,
                        ClientUpdate::Params { .. } => unreachable!("checked in submit"),
                    })
                    .collect();
                self.aggregate_fedsgd(&grads)
            }
            Strategy::FedAvg => {
                let params: Vec<ModelParams> = received
                    .into_values()
                    .map(|u| match u {
                        ClientUpdate::Params { params, .. } => params,
                        ClientUpdate::Gradients(_) => unreachable!("checked in submit"),
                    })
                    .collect();
                self.aggregate_fedavg(&params)
            }
        }
    }

    /// `W ← W − τ·(1/M)·Σ g`, tensor by tensor, in whatever domain `W` is in.
    pub fn aggregate_fedsgd(&mut self, updates: &[GradientUpdate]) -> Result<(), FederationError> {
        self.check_quorum(updates.iter().map(|u| (u.client_id, u.round, u.encrypted)))?;
        let mean = mean_layers(updates.iter().map(|u| &u.layers))?;
        self.global.layers.axpy(-self.lr, &mean)?;
        self.round += 1;
        Ok(())
    }

    /// Every tensor becomes the mean of the clients' tensors.
    ///
    /// The slice is taken to be in client id order, one entry per client.
    pub fn aggregate_fedavg(&mut self, updates: &[ModelParams]) -> Result<(), FederationError> {
        self.check_quorum(updates.iter().enumerate().map(|(i, p)| (i as u32, self.round, p.encrypted)))?;
        self.global.layers = mean_layers(updates.iter().map(|p| &p.layers))?;
        self.round += 1;
        Ok(())
    }

    fn check_quorum(&self, updates: impl Iterator<Item = (u32, u32, bool)>) -> Result<(), FederationError> {
        let mut seen = std::collections::BTreeSet::new();
        for (id, round, encrypted) in updates {
            if round != self.round {
                return Err(FederationError::StaleRound { expected: self.round, got: round });
            }
            check_domain(self.global.encrypted, encrypted)?;
            if !seen.insert(id) {
                return Err(FederationError::Protocol(format!("duplicate update from client {id}")));
            }
        }
        if seen.len() != self.expected_clients {
            return Err(FederationError::Protocol(format!(
                "quorum needs {} updates, got {}",
                self.expected_clients,
                seen.len()
            )));
        }
        Ok(())
    }
}

fn check_domain(global: bool, update: bool) -> Result<(), FederationError> {
    if global != update {
        return Err(FederationError::DomainMixing { global: domain_name(global), update: domain_name(update) });
    }
    Ok(())
}

fn mean_layers<'a>(items: impl Iterator<Item = &'a Layers>) -> Result<Layers, FederationError> {
    let mut items = items.peekable();
    let first = items.peek().ok_or_else(|| FederationError::Protocol("no updates to aggregate".into()))?;
    let mut sum = (*first).clone();
    sum.scale_mut(0.0);
    let mut n = 0usize;
    for l in items {
        sum.axpy(1.0, l)?;
        n += 1;
    }
    sum.scale_mut(1.0 / n as f64);
    Ok(sum)
}

/// What the server learned from a run.
#[derive(Debug, Clone)]
pub struct ServerOutcome {
    pub records: Vec<RoundRecord>,
    /// Final global model, still encrypted in encrypted mode.
    pub global: ModelParams,
    /// Test accuracy of the final model reported by client 0, if measured.
    pub final_accuracy: Option<f64>,
}

enum Inbox {
    Message(usize, RoundMessage),
    Failed(usize, TransportError),
}

struct Connections {
    sinks: Vec<Box<dyn MessageSink>>,
    peers: Vec<String>,
    inbox: mpsc::Receiver<Inbox>,
}

impl Connections {
    fn start(endpoints: Vec<Endpoint>) -> Self {
        let (tx, inbox) = mpsc::channel();
        let mut sinks = Vec::new();
        let mut peers = Vec::new();
        for (i, ep) in endpoints.into_iter().enumerate() {
            peers.push(ep.peer().to_string());
            let (sink, mut source) = ep.split();
            sinks.push(sink);
            let tx = tx.clone();
            thread::spawn(move || loop {
                match source.recv() {
                    Ok(m) => {
                        if tx.send(Inbox::Message(i, m)).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Inbox::Failed(i, e));
                        return;
                    }
                }
            });
        }
        Self { sinks, peers, inbox }
    }

    fn next(&self) -> Result<(usize, RoundMessage), FederationError> {
        match self.inbox.recv() {
            Ok(Inbox::Message(i, m)) => Ok((i, m)),
            Ok(Inbox::Failed(i, e)) => {
                log::warn!("connection {} failed: {e}", self.peers[i]);
                Err(e.into())
            }
            Err(_) => Err(FederationError::Protocol("all connections closed".into())),
        }
    }

    fn broadcast(&mut self, msg: &RoundMessage) -> Result<(), FederationError> {
        for s in &mut self.sinks {
            s.send(msg)?;
        }
        Ok(())
    }
}

/// Runs the server side of a federation over already-open connections.
///
/// Waits for every client to register, then for each of `rounds` rounds sends
/// the global model and aggregates the full quorum of replies. Afterwards
/// the final model is sent once more, clients acknowledge with
/// `round_complete`, and everyone is told to shut down.
///
/// On failure the error is [`FederationError::Aborted`] carrying the last
/// round that was aggregated.
pub fn serve(
    endpoints: Vec<Endpoint>,
    initial: ModelParams,
    strategy: Strategy,
    lr: f64,
    rounds: u32,
) -> Result<ServerOutcome, FederationError> {
    let mut state = ServerState::new(initial, strategy, lr, endpoints.len());
    let mut records = Vec::new();
    let result = serve_inner(endpoints, &mut state, rounds, &mut records);
    match result {
        Ok(final_accuracy) => Ok(ServerOutcome { records, global: state.global, final_accuracy }),
        Err(e) => Err(FederationError::Aborted {
            last_completed_round: state.round.checked_sub(1),
            source: Box::new(e),
        }),
    }
}

fn serve_inner(
    endpoints: Vec<Endpoint>,
    state: &mut ServerState,
    rounds: u32,
    records: &mut Vec<RoundRecord>,
) -> Result<Option<f64>, FederationError> {
    let m = endpoints.len();
    let mut conns = Connections::start(endpoints);
    let mut client_of = vec![None; m];
    let mut registered = 0;
    while registered < m {
        let (i, msg) = conns.next()?;
        if msg.msg_type != MessageType::Register {
            return Err(FederationError::Protocol(format!("expected register, got {:?}", msg.msg_type)));
        }
        let id = msg.sender_id;
        if id as usize >= m {
            return Err(FederationError::Protocol(format!("client id {id} out of range for {m} clients")));
        }
        if client_of.contains(&Some(id)) || client_of[i].is_some() {
            return Err(FederationError::Protocol(format!("client {id} registered twice")));
        }
        client_of[i] = Some(id);
        registered += 1;
        log::debug!("client {id} registered from {}", conns.peers[i]);
    }

    for t in 0..rounds {
        let started = Instant::now();
        conns.broadcast(&RoundMessage::global_model(t, &state.global))?;
        let mut losses = vec![f64::NAN; m];
        let mut accuracy = None;
        loop {
            let (i, msg) = conns.next()?;
            let id = sender_checked(&client_of, i, &msg)?;
            let metrics = msg.metrics()?;
            let update = match msg.msg_type {
                MessageType::LocalUpdateGrad => ClientUpdate::Gradients(msg.gradient_update()?),
                MessageType::LocalUpdateParams => {
                    ClientUpdate::Params { params: msg.model_params()?, round: msg.round, client_id: id }
                }
                other => return Err(FederationError::Protocol(format!("unexpected {other:?} during round {t}"))),
            };
            losses[id as usize] = metrics.loss;
            if let Some(a) = metrics.accuracy() {
                accuracy = Some(a);
            }
            if state.submit(update)? {
                break;
            }
        }
        state.aggregate()?;
        // Accuracy reported now describes the model before this round's update.
        if let (Some(prev), Some(a)) = (records.last_mut(), accuracy) {
            let prev: &mut RoundRecord = prev;
            prev.accuracy = a;
        }
        records.push(RoundRecord { round: t, losses, accuracy: f64::NAN, wall_seconds: started.elapsed().as_secs_f64() });
        log::info!("round {t} aggregated");
    }

    conns.broadcast(&RoundMessage::global_model(rounds, &state.global))?;
    let mut final_accuracy = None;
    for _ in 0..m {
        let (i, msg) = conns.next()?;
        sender_checked(&client_of, i, &msg)?;
        if msg.msg_type != MessageType::RoundComplete || msg.round != rounds {
            return Err(FederationError::Protocol(format!("expected round_complete for round {rounds}, got {:?}", msg.msg_type)));
        }
        if let Some(a) = msg.metrics()?.accuracy() {
            final_accuracy = Some(a);
        }
    }
    if let (Some(last), Some(a)) = (records.last_mut(), final_accuracy) {
        last.accuracy = a;
    }
    conns.broadcast(&RoundMessage::shutdown(rounds))?;
    Ok(final_accuracy)
}

fn sender_checked(client_of: &[Option<u32>], conn: usize, msg: &RoundMessage) -> Result<u32, FederationError> {
    let id = client_of[conn].expect("all connections registered");
    if msg.sender_id != id {
        return Err(FederationError::Protocol(format!("client {id} sent a message claiming to be {}", msg.sender_id)));
    }
    Ok(id)
}
