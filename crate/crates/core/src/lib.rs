//! Invertible rescaling, grain removal and display-power reduction.

pub mod config;
pub mod haar;
pub mod image;
pub mod metrics;
pub mod network;
pub mod objectives;
pub mod tensor;
pub mod training;
