pub mod baselines;
pub mod data;
pub mod emulator;
pub mod error;
pub mod estimation;
pub mod gapdist;
pub mod models;
pub mod numerics;
pub mod perception;
pub mod waiting;

pub use error::{Error, ErrorClass, Result};
