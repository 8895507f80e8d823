//! Simulator for a fully optical convolutional neural network: Clements MZI
//! meshes, all-optical WDM max pooling, and microring nonlinearities, with a
//! bit-exact differentiable digital twin for pre-training, SPSA in-situ
//! fine-tuning on a crosstalk-perturbed hardware path, and an analytical
//! power/latency/energy model.
//!
//! The numeric core is generic over the scalar type (f32 or f64) through
//! [`scalar::Scalar`]; concrete aliases live at the crate root.

pub mod error;
pub mod eval;
pub mod idx;
pub mod network;
pub mod perf;
pub mod photonic;
pub mod scalar;
pub mod spsa;
pub mod twin;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default precision used by the CLI and the acceptance experiments.
pub type F = f64;

pub type OpticalField64 = photonic::OpticalField<f64>;
pub type OpticalField32 = photonic::OpticalField<f32>;
pub type CrosstalkModel64 = photonic::CrosstalkModel<f64>;
pub type NetworkConfig64 = network::NetworkConfig<f64>;
pub type TrainConfig64 = twin::TrainConfig<f64>;
pub type SpsaConfig64 = spsa::SpsaConfig<f64>;
