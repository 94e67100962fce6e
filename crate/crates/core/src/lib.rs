//! Partial-label class-incremental learning with prototype-guided label
//! disambiguation and a diversity-aware episodic memory.

pub mod commands;
pub mod config;
pub mod data;
pub mod disambiguation;
pub mod error;
pub mod formats;
pub mod math;
pub mod memory;
pub mod model;
pub mod prototypes;
pub mod trainer;

pub use error::{Error, Result};
