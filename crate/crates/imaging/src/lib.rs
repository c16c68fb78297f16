//! Image side of the parameter-prediction pipeline: measuring the three
//! global enhancement parameters (saturation, brightness, contrast),
//! extracting the 1709-dimensional feature vector, and applying target
//! parameters to produce enhanced versions.
//!
//! All functions are pure per-image transforms; batch callers are free to
//! parallelize across images.

pub mod apply;
pub mod color;
pub mod corpus;
pub mod features;
pub mod measure;

mod io;

pub use apply::{apply_params, ApplyOutcome, DEFAULT_APPLY_MAX_ITER, DEFAULT_APPLY_TOL};
pub use features::{extract_features, FeatureConfig};
pub use io::{load_image, save_png};
pub use measure::{measure_params, HsvBuffer, ImageParams};

use fbptf_core::{Error, Result};

/// 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid {
                op: "ImageRGB::new",
                detail: format!("empty image ({width}x{height})"),
            });
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::Dimension {
                op: "ImageRGB::new",
                detail: format!(
                    "{} bytes for {width}x{height} (expected {})",
                    pixels.len(),
                    width * height * 3
                ),
            });
        }
        Ok(ImageRGB { width, height, pixels })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        ImageRGB::new(width, height, pixels)
    }

    pub fn uniform(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        ImageRGB::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let at = (y * self.width + x) * 3;
        [self.pixels[at], self.pixels[at + 1], self.pixels[at + 2]]
    }
}
