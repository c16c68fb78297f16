//! Image file I/O: reads PNG and binary PPM (P6), writes PNG.

use crate::ImageRGB;
use fbptf_core::{Error, Result};
use std::path::Path;

/// Loads a PNG or binary PPM image and converts it to 8-bit RGB.
pub fn load_image(path: &Path) -> Result<ImageRGB> {
    let decoded = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path.display().to_string(), source),
        other => Error::Parse {
            path: path.display().to_string(),
            line: 0,
            column: 0,
            detail: other.to_string(),
        },
    })?;
    let rgb = decoded.to_rgb8();
    ImageRGB::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
}

/// Writes the image as PNG.
pub fn save_png(img: &ImageRGB, path: &Path) -> Result<()> {
    let buffer: image::RgbImage =
        image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
            .expect("pixel length matches dimensions by ImageRGB invariant");
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::io(path.display().to_string(), source),
            other => Error::Invalid { op: "save_png", detail: other.to_string() },
        })
}
