//! The 1709-dimensional feature vector: a joint HSV histogram plus
//! localized brightness/saturation/contrast grids plus the three global
//! parameters.

use crate::measure::{mean, population_std, HsvBuffer};
use crate::ImageRGB;
use fbptf_core::{Error, Result};

/// Bin and grid counts for `extract_features`. Defaults give the
/// 26*7*7 + 3*12*12 + 3 = 1709 layout. Output ordering:
///   [0, H*S*V)          joint histogram, index (hb*sat_bins + sb)*val_bins + vb
///   [+0, +R*C)          per-cell mean brightness, cells row-major
///   [+R*C, +2*R*C)      per-cell mean saturation
///   [+2*R*C, +3*R*C)    per-cell brightness standard deviation (local contrast)
///   last 3              global saturation, brightness, contrast
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub hue_bins: usize,
    pub sat_bins: usize,
    pub val_bins: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { hue_bins: 26, sat_bins: 7, val_bins: 7, grid_rows: 12, grid_cols: 12 }
    }
}

impl FeatureConfig {
    pub fn feature_len(&self) -> usize {
        self.hue_bins * self.sat_bins * self.val_bins + 3 * self.grid_rows * self.grid_cols + 3
    }

    pub fn validate(&self) -> Result<()> {
        if [self.hue_bins, self.sat_bins, self.val_bins, self.grid_rows, self.grid_cols]
            .contains(&0)
        {
            return Err(Error::Invalid {
                op: "FeatureConfig::validate",
                detail: "all bin and grid counts must be positive".to_string(),
            });
        }
        Ok(())
    }
}

#[inline]
fn bin(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

/// Extracts the feature vector in the layout documented on
/// [`FeatureConfig`]. The image must be at least grid_rows x grid_cols
/// pixels so every grid cell is non-empty.
pub fn extract_features(img: &ImageRGB, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if img.width() < cfg.grid_cols || img.height() < cfg.grid_rows {
        return Err(Error::Invalid {
            op: "extract_features",
            detail: format!(
                "{}x{} image is smaller than the {}x{} grid",
                img.width(),
                img.height(),
                cfg.grid_rows,
                cfg.grid_cols
            ),
        });
    }
    let buf = HsvBuffer::from_image(img);
    let mut out = Vec::with_capacity(cfg.feature_len());

    let mut hist = vec![0.0; cfg.hue_bins * cfg.sat_bins * cfg.val_bins];
    for i in 0..buf.h.len() {
        let idx = (bin(buf.h[i], cfg.hue_bins) * cfg.sat_bins + bin(buf.s[i], cfg.sat_bins))
            * cfg.val_bins
            + bin(buf.v[i], cfg.val_bins);
        hist[idx] += 1.0;
    }
    let inv = 1.0 / buf.h.len() as f64;
    out.extend(hist.iter().map(|c| c * inv));

    // Grid cells partition the image with integer boundaries floor(r*H/R);
    // height >= rows guarantees each cell is non-empty.
    let (w, hgt) = (img.width(), img.height());
    let mut cell_v: Vec<Vec<f64>> = vec![Vec::new(); cfg.grid_rows * cfg.grid_cols];
    let mut cell_s: Vec<Vec<f64>> = vec![Vec::new(); cfg.grid_rows * cfg.grid_cols];
    for y in 0..hgt {
        let gr = ((y * cfg.grid_rows) / hgt).min(cfg.grid_rows - 1);
        for x in 0..w {
            let gc = ((x * cfg.grid_cols) / w).min(cfg.grid_cols - 1);
            let cell = gr * cfg.grid_cols + gc;
            cell_v[cell].push(buf.v[y * w + x]);
            cell_s[cell].push(buf.s[y * w + x]);
        }
    }
    out.extend(cell_v.iter().map(|c| mean(c)));
    out.extend(cell_s.iter().map(|c| mean(c)));
    out.extend(cell_v.iter().map(|c| population_std(c, mean(c))));

    let p = buf.measure();
    out.extend_from_slice(&p.as_array());
    debug_assert_eq!(out.len(), cfg.feature_len());
    Ok(out)
}
