pub mod cli;
pub mod dynamics;
pub mod error;
pub mod junction;
pub mod lattice;
pub mod model;
pub mod reservoirs;
pub mod solver;

pub use error::{Error, Result};
