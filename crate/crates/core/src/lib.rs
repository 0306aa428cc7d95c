pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod integrate;
pub mod linalg;
pub mod loss;
pub mod models;
pub mod qla;
pub mod simulator;

pub use error::{QlaError, Result};
