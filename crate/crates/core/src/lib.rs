pub mod autodiff;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod ops;
pub mod params;
pub mod search;
pub mod seed;
pub mod supernet;
pub mod trainer;

pub use error::{Error, Result};
