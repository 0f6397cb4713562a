pub mod circuitlib;
pub mod clcu;
pub mod data;
pub mod error;
pub mod experiment;
pub mod registry;
pub mod model;
pub mod similarity;
pub mod simcore;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
