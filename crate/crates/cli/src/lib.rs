//! File formats, reports and the `latclass` command-line front end for
//! [`latclass_core`].

pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod manifest;
pub mod output;
pub mod parallel;
pub mod params_io;
pub mod report;
pub mod selftest;

pub use error::{Error, Result};
