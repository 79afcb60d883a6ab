//! Operational side of wagonline: durable train store, cloud publishing,
//! review API and the detector client.

pub mod api;
pub mod config;
pub mod detector;
pub mod publish;
pub mod store;
