//! Core of an interactive Bayesian hierarchical clustering engine: binary
//! trees with divergence times, triplet constraints, the Dirichlet diffusion
//! tree model and a constraint-respecting Metropolis-Hastings sampler.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod constraints;
pub mod ddt;
pub mod error;
pub mod leafset;
pub mod query;
pub mod sampler;
pub mod trace;
pub mod tree;
pub mod triplet;

pub use constraints::{build, check_satisfies, incorporate_triplet};
pub use ddt::{AttachLocation, DdtParams};
pub use error::{Error, Result};
pub use leafset::LeafSet;
pub use query::{QueryScheme, SchemeKind};
pub use sampler::ChainState;
pub use trace::{SampleTrace, Snapshot};
pub use tree::{NodeId, Shape, Tree, TreeBuilder};
pub use triplet::{Triplet, TripletSet};
