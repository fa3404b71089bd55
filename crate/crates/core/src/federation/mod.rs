//! Clients and server for federated training over encrypted embeddings.
//!
//! One round: the server sends the global model, every client decrypts it,
//! trains on its own partition, encrypts its update and sends it back, and
//! the server aggregates once all `M` updates are in. In encrypted mode the
//! server only ever sees `E_a·W_pat` and `E_b·W_pos`; because both transforms
//! are linear, averaging or stepping in that domain commutes with decryption.
//!
//! The server processes clients in id order so two runs with the same seeds
//! produce the same floating-point sums.

mod client;
mod config;
mod server;
mod sim;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::CryptoError;
use crate::data::DataError;
use crate::model::{GradientUpdate, ModelError, ModelParams};
use crate::numerics::NumericsError;
use crate::transport::TransportError;

pub use client::{run_client, ClientOutcome, ClientState, LocalTraining};
pub use config::{DataSource, Mode, RunConfig, Strategy, TransportConfig, TransportKind};
pub use server::{serve, ServerOutcome, ServerState};
pub use sim::{
    client_state, initial_model, prepare_data, run_simulation, run_simulation_from, FederatedData, SimulationOutcome,
};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("stale round: expected {expected}, got {got}")]
    StaleRound { expected: u32, got: u32 },
    #[error("cannot combine a {global} model with a {update} update")]
    DomainMixing { global: &'static str, update: &'static str },
    /// The run stopped early; `last_completed_round` is `None` if no round finished.
    #[error("run aborted after round {}: {source}", last_completed_round.map_or("none".to_string(), |r| r.to_string()))]
    Aborted { last_completed_round: Option<u32>, source: Box<FederationError> },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A client's contribution to one round.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientUpdate {
    /// FedSGD.
    Gradients(GradientUpdate),
    /// FedAvg.
    Params { params: ModelParams, round: u32, client_id: u32 },
}

impl ClientUpdate {
    pub fn round(&self) -> u32 {
        match self {
            ClientUpdate::Gradients(g) => g.round,
            ClientUpdate::Params { round, .. } => *round,
        }
    }

    pub fn client_id(&self) -> u32 {
        match self {
            ClientUpdate::Gradients(g) => g.client_id,
            ClientUpdate::Params { client_id, .. } => *client_id,
        }
    }

    pub fn encrypted(&self) -> bool {
        match self {
            ClientUpdate::Gradients(g) => g.encrypted,
            ClientUpdate::Params { params, .. } => params.encrypted,
        }
    }
}

/// Metrics of one aggregated round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u32,
    /// Mean training loss each client reported at the round's starting model, by client id.
    pub losses: Vec<f64>,
    /// Test accuracy of the model produced by this round; NaN if not measured.
    pub accuracy: f64,
    pub wall_seconds: f64,
}
