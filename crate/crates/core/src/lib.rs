//! Modular map-reading navigation agent.

pub mod agent;
pub mod harness;
pub mod localization;
pub mod map_interp;
pub mod maze;
pub mod numerics;
pub mod training;
pub mod vlm;
