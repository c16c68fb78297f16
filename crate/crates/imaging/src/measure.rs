//! The three global enhancement parameters and the float HSV working
//! buffer the adjustment loop operates on.

use crate::color::{hsv_to_rgb, quantize, rgb_to_hsv};
use crate::ImageRGB;
use fbptf_core::{Error, Result};

/// Global parameters of an image, each in [0,1]:
/// mean HSV saturation, mean HSV value (brightness), and the population
/// standard deviation of HSV value (contrast).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageParams {
    pub saturation: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl ImageParams {
    /// Canonical parameter-set order: (saturation, brightness, contrast).
    pub fn as_array(&self) -> [f64; 3] {
        [self.saturation, self.brightness, self.contrast]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ImageParams { saturation: a[0], brightness: a[1], contrast: a[2] }
    }

    pub fn validate_unit_range(&self) -> Result<()> {
        for (name, v) in [
            ("saturation", self.saturation),
            ("brightness", self.brightness),
            ("contrast", self.contrast),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Invalid {
                    op: "ImageParams::validate_unit_range",
                    detail: format!("{name} = {v} outside [0,1]"),
                });
            }
        }
        Ok(())
    }
}

/// Per-pixel HSV planes in f64, the mutable working form for
/// enhancement; quantization back to 8-bit RGB happens once at the end.
#[derive(Debug, Clone)]
pub struct HsvBuffer {
    width: usize,
    height: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

impl HsvBuffer {
    pub fn from_image(img: &ImageRGB) -> Self {
        let n = img.pixel_count();
        let mut h = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for px in img.pixels().chunks_exact(3) {
            let (hh, ss, vv) =
                rgb_to_hsv(px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0);
            h.push(hh);
            s.push(ss);
            v.push(vv);
        }
        HsvBuffer { width: img.width(), height: img.height(), h, s, v }
    }

    /// Quantizes back to an 8-bit image, clamping each channel to [0,1].
    pub fn to_image(&self) -> ImageRGB {
        let mut pixels = Vec::with_capacity(self.h.len() * 3);
        for i in 0..self.h.len() {
            let (r, g, b) =
                hsv_to_rgb(self.h[i], self.s[i].clamp(0.0, 1.0), self.v[i].clamp(0.0, 1.0));
            pixels.push(quantize(r));
            pixels.push(quantize(g));
            pixels.push(quantize(b));
        }
        ImageRGB::new(self.width, self.height, pixels).expect("buffer dimensions are valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn measure(&self) -> ImageParams {
        let mean_v = mean(&self.v);
        ImageParams {
            saturation: mean(&self.s),
            brightness: mean_v,
            contrast: population_std(&self.v, mean_v),
        }
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn population_std(xs: &[f64], mean: f64) -> f64 {
    // A constant sequence has zero spread exactly; the float mean of
    // identical values can round, so short-circuit instead of measuring
    // that rounding as spread.
    if xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    var.sqrt()
}

/// Measures the global parameters of an image.
pub fn measure_params(img: &ImageRGB) -> ImageParams {
    HsvBuffer::from_image(img).measure()
}
