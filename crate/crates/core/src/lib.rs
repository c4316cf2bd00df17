//! Two-stage bacilli detection: an attention residual U-Net segments tiled
//! smear images, connected components of the reassembled mask become regions
//! of interest, and a compact vision transformer labels each region.

pub mod config;
pub mod error;
pub mod experiment;
pub mod gradsuite;
pub mod imaging;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod pipeline;
pub mod training;
pub mod unet;
pub mod vit;

pub use error::{Error, Result};
