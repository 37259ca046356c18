//! Desk-scale federated-learning simulator for end-to-end sequence
//! recognition: CTC-AED training on a tiny model, the full local/central
//! optimizer zoo, speaker-partitioned non-IID data, and cosine-similarity
//! diagnostics over update streams.

pub mod central;
pub mod data;
pub mod diag;
pub mod error;
pub mod eval;
pub mod fedcore;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;

mod parallel;

pub use error::{Error, Result};
