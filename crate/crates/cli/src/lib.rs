//! Batch orchestration for diffsense-core: declarative configs, deterministic
//! grid execution on a worker pool, CSV/JSON artifacts.

pub mod compare;
pub mod config;
pub mod io;
pub mod runner;
