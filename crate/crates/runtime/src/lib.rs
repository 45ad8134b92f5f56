//! Parties, transports, persistence, experiments and the command line
//! around the schemes in `sknn_core`.

pub mod attack_harness;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod keystore;
pub mod roles;
pub mod wire;

pub use dataset::{plaintext_knn, Dataset};
pub use wire::Scheme;
