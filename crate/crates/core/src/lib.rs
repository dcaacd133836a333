//! Certified upper bounds, tightness factors and switching-robust controllers
//! for the worst-case value function of discrete-time switched linear
//! systems with quadratic costs, built on path-complete graphs.

pub mod bounds;
pub mod control;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod linalg;
pub mod oracle;
pub mod sdp;
pub mod system;
pub mod tightness;

pub use error::{Error, Result};
