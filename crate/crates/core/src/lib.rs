pub mod blockgrid;
pub mod cli;
pub mod error;
pub mod fp_filter;
pub mod imageio;
pub mod metrics;
pub mod morph;
pub mod pipeline;
pub mod raster;
pub mod selftrain;
pub mod stain;
pub mod synth;
pub mod threshold;

pub use error::{Error, Result};
pub use raster::{GrayImage, LabelMap, Mask, RgbImage};
