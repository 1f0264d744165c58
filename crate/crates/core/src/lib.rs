//! Distributed QCNN laboratory: a dense statevector engine, QCNN model builder
//! for the non-distributed / no-communication / classical-communication /
//! quantum-communication schemes, exact gradients, Fisher-information
//! capacity analytics, synthetic datasets, and a two-node executor that runs
//! classical-communication models as local simulations exchanging bits.

pub mod error;
pub mod fisher;
pub mod gradients;
pub mod circuits;
pub mod datagen;
pub mod distexec;
pub mod qstate;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
