//! Configuration-driven scenario runner for the pulseopt engine.

pub mod config;
pub mod preset;
pub mod scenario;
