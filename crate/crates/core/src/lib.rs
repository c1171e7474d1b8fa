pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
