//! Federated learning with secret-key encrypted ViT embeddings.
//!
//! Clients share a secret key and send the server patch- and
//! position-embedding parameters (or gradients) transformed by that key. The
//! transforms are linear, so the server can run FedSGD or FedAvg directly on
//! the encrypted tensors, and clients decrypt the result exactly. The
//! [`attack`] module provides a closed-form gradient-inversion attack used to
//! show that plaintext updates leak training images while encrypted ones do
//! not.

mod codec;

pub mod attack;
pub mod crypto;
pub mod data;
pub mod federation;
pub mod model;
pub mod modelfile;
pub mod numerics;
pub mod transport;

pub use crypto::SecretKey;
pub use model::{GradientUpdate, Image, Layers, ModelConfig, ModelParams, Sample};
pub use numerics::{Matrix, Rng, Seed};
