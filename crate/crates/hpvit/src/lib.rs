//! Filesystem side of the blur-curriculum Vision Transformer: dataset
//! scanning and decoding, the prepared curriculum cache, checkpoints, run
//! logs, evaluation reports and the `hpvit` command line.

pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod parallel;
pub mod report;
pub mod runlog;
pub mod synth;
