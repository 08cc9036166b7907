#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agents;
pub mod backend;
pub mod captioning;
pub mod digest;
pub mod organizer;
pub mod scenegraph;
pub mod scoring;
pub mod topology;
pub mod types;
