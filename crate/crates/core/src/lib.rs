pub mod error;
pub mod geometry;
pub mod measures;
pub mod pde;
pub mod transport;
pub mod control;
pub mod structure;
pub mod cli;

pub use error::{Error, Result};
