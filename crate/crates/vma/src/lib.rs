//! Runtime for the video multi-agent QA engine: model backends, record and
//! replay cassettes, caches, trace files, the benchmark runner and the CLI.

pub mod cassette;
pub mod config;
pub mod dataset;
pub mod exec;
pub mod frames;
pub mod mock;
pub mod remote;
pub mod runner;
pub mod store;
pub mod tracefile;

pub use vma_core as core;
