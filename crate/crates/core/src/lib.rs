//! Non-signaling values of k-player one-round games.

pub mod error;
pub mod game;
pub mod harness;
pub mod io;
pub mod lp;
pub mod pack_cover;
pub mod random;
pub mod transforms;
pub mod value;

pub use error::{Error, Result};
pub use game::{
    canonical_sim_family, check_strategy, evaluate_value, Assignment, CheckReport, Game, Model,
    SimFamily, Strategy, SubDist, Subset, CHECK_TOL, MASS_TOL,
};
