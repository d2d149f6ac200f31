//! Files, datasets, experiments and the session server around `ibhc-core`.

pub mod cli;
pub mod dataset;
pub mod experiment;
pub mod formats;
pub mod linkage;
pub mod newick;
pub mod server;
pub mod session;
