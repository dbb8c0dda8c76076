//! Rothe-type time discretization of incompressible flow in moving domains
//! and of a fluid-shell interaction problem, with compactness diagnostics.

pub mod assembly;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod rothe_fsi;
pub mod rothe_ns;
pub mod spaces;
pub mod step;

pub use error::{Error, Result};
