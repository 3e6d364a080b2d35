//! Differentiable inverse rendering of articulated, textured meshes.

pub mod error;
pub mod fit;
pub mod geometry;
pub mod losses;
pub mod raster;
pub mod sceneio;
pub mod texfield;

pub use error::{Error, ErrorKind, Result};
