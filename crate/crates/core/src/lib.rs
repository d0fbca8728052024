pub mod compnet;
pub mod config;
pub mod error;
pub mod eval;
pub mod generative;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod numerics;
pub mod rng;
pub mod sst;
pub mod temporal;
pub mod training;

pub use error::{Error, Result};
