//! Problem files, output formatting and the experiment commands behind the
//! `refine-rd` binary.
//!
//! Every command writes a CSV with fixed columns. Floats carry 12
//! significant digits so that identical inputs give byte-identical files.

pub mod commands;
pub mod error;
pub mod output;
pub mod problem_io;

pub use error::CliError;
