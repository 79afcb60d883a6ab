//! Counting and identification of train wagons from per-frame detection
//! records.

pub mod config;
pub mod detection;
pub mod fuse;
pub mod geometry;
pub mod grammar;
pub mod pipeline;
pub mod recognize;
pub mod sim;
pub mod summary;
pub mod track;
