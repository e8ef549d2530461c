//! Differentiable point-cloud/grid operators with hand-written backward
//! passes, point-cloud completion metrics, and a small coarse-to-fine
//! completion network trained with them.

pub mod cli;
pub mod cubic;
pub mod error;
pub mod grid;
pub mod gridding;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod mininet;
pub mod nearest;
pub mod reverse;
pub mod run_config;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{Point3, PointCloud, Resolution, ScalarGrid};
