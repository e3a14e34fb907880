//! Quantum-enhanced V2X building blocks on a classical statevector engine.
//!
//! The modules map onto the pieces of the system:
//!
//! - [`qcore`]: statevector simulation, gates, observables, parameter-shift gradients.
//! - [`codec`]: quantum-CNN semantic encoder/decoder, entropy distortion and training.
//! - [`channel`]: fading channel, semantic capacity, rate adaptation, knowledge base.
//! - [`fusion`]: sparse self-attention, coordinate alignment, patching, reversible fusion.
//! - [`transfer`]: model-transfer MDP, quantum actor-critic, domain alignment loss.
//! - [`fed`]: low-rank federated aggregation with masking and reverse correction.
//!
//! The engine and the distortion metrics are generic over [`Real`] (f32 or f64); the
//! aliases below fix the scalar to f64, which every training path uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codec;
pub mod error;
pub mod fed;
pub mod fusion;
pub mod qcore;
pub mod scalar;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type StateVector = qcore::StateVector<f64>;
pub type Circuit = qcore::Circuit<f64>;
pub type GateOp = qcore::GateOp<f64>;
pub type Angle = qcore::Angle<f64>;
