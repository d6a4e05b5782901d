//! Multi-reference translation benchmark construction and evaluation.

pub mod aligner;
pub mod bench;
pub mod client;
pub mod corpus;
pub mod curation;
pub mod digest;
pub mod metrics;
pub mod normalize;
pub mod structured;
pub mod synthetic;
pub mod verifier;
