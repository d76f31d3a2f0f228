//! Simulator, file formats, plotting and command-line front end for
//! `bevtrack-core`.

pub mod cli;
pub mod error;
pub mod formats;
pub mod plot;
pub mod simulator;

pub use error::{Error, Result};
