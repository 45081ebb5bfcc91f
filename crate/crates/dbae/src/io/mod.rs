//! Persistence and data handling.
//!
//! Everything that crosses a process boundary lives here: run
//! configuration documents, the binary tensor container, training
//! checkpoints, CSV metrics and evaluation reports, toy dataset
//! generators, and PGM image dumps. All binary formats are
//! little-endian and round-trip bit-exactly.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod dataset;
pub mod pgm;
pub mod tensor_file;
pub mod toy;
