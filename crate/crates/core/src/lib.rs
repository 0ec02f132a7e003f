//! Interference alignment for the K-user MIMO interference channel with
//! limited CSI feedback: closed-form precoders, feedback topologies and
//! their overhead, random vector quantization, feedback-bit allocation and
//! Monte Carlo experiment drivers.

pub mod bitalloc;
pub mod channel;
pub mod error;
pub mod harness;
pub mod ia;
pub mod linalg;
pub mod par;
pub mod quantize;
pub mod rng;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};
