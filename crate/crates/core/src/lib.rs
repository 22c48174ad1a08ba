//! Semantically conditioned LSTM generation with multi-domain adaptation.
//!
//! A generator is trained on a data-rich source domain, adapted to a target
//! domain by fine-tuning or by training on counterfeited target data, and
//! optionally refined with a discriminative (expected-score) objective.

pub mod corpus;
pub mod counterfeit;
pub mod da;
pub mod decoder;
pub mod dt;
pub mod eval;
pub mod error;
pub mod nn;
pub mod recipes;
pub mod sclstm;

pub use error::{Error, Result};
