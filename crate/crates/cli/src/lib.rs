//! Library surface of the `curate` binary, exposed so integration tests can
//! drive the pieces directly.

pub mod config;
pub mod report;
pub mod stages;
pub mod synth;
