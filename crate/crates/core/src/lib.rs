//! Monolithic divergence-conforming HDG solver for linear fluid-structure
//! interaction with a thick structure.

pub mod error;
pub mod cli;
pub mod forms;
pub mod krylov;
pub mod mesh;
pub mod spaces;
pub mod sparse;
pub mod stepper;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
