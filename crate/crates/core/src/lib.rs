pub mod attention;
pub mod bound;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod model;
pub mod numeric;
pub mod regularizer;
pub mod simulator;
pub mod sm_layer;
pub mod train;

pub use error::{Error, Result};
