//! Decomposition of video frames into reflectance, direct illumination and
//! per-base-color indirect illumination layers.

mod error;

pub mod energy;
pub mod correction;
pub mod editing;
pub mod eval;
pub mod imaging;
pub mod palette;
pub mod par;
pub mod pipeline;
pub mod refine;
pub mod solver;

pub use error::{Error, Result};
