pub mod acm;
pub mod cachestore;
pub mod cli;
pub mod engine;
pub mod error;
pub mod image;
pub mod metrics;
pub mod numerics;
pub mod oem;
pub mod rng;
mod serde_util;
pub mod toymodel;

pub use error::{Error, Result};
