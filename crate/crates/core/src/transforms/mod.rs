//! The prover reduction `T(G)` with its strategy lift, and the
//! subNS to honest-referee NS conversion pipeline.

mod pipeline;
mod reduction;

pub use pipeline::*;
pub use reduction::*;
