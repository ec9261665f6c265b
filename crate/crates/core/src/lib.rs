//! Sparse time-frequency features and transformer classification for
//! systolic heart murmur segments.

mod binio;
pub mod classifier;
pub mod cli;
pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod pursuit;
pub mod signal_io;

pub use error::{Error, Result};
