//! Grid-based construction, registration and averaging of 2D/3D diffeomorphisms.

pub mod cli;
pub mod error;
pub mod field;
pub mod io;
pub mod poisson;
pub mod registration;
pub mod render;
pub mod scenarios;
pub mod synth;
pub mod template;
pub mod varcon;

pub use error::{MorphoError, Result};
