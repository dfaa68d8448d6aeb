pub mod cli;
pub mod error;
pub mod experiment;
pub mod mc_verify;
pub mod models;
pub mod path_engine;
pub mod random_time;
pub mod representations;
pub mod seeds;
pub mod solvers;

pub use error::{Error, Result};
