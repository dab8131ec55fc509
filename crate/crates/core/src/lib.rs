//! Mean curvature flow of graphs of maps between model spaces.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod model_spaces;
pub mod monitors;
pub mod oracle;
pub mod state;

pub use error::{Error, Result};
