//! Feature-to-pixels enhancement: measure one image, predict its M
//! parameter sets, clip them to the admissible band around the measured
//! values, and apply each set to produce output versions.

use fbptf_core::matrix::{atomic_write, format_f64};
use fbptf_core::model::{clip, predict, ClipConfig, TrainedModel};
use fbptf_core::{Error, Result};
use fbptf_imaging::{
    apply_params, extract_features, measure_params, save_png, ApplyOutcome, FeatureConfig,
    ImageParams, ImageRGB,
};
use std::path::Path;

/// One output version: the raw prediction, the band-clipped target, and
/// the application outcome (image, achieved parameters, convergence).
#[derive(Debug)]
pub struct EnhancedVersion {
    pub predicted: [f64; 3],
    pub clipped: [f64; 3],
    pub outcome: ApplyOutcome,
}

#[derive(Debug)]
pub struct EnhanceResult {
    /// Parameters measured on the input image.
    pub measured: ImageParams,
    pub versions: Vec<EnhancedVersion>,
}

/// Predicts and applies every version of `img` under `model`. `clip_cfg`
/// None skips the band entirely; the application targets are additionally
/// clamped to [0, 1], the measurable range.
pub fn enhance_image(
    img: &ImageRGB,
    model: &TrainedModel,
    clip_cfg: Option<&ClipConfig>,
    feature_cfg: &FeatureConfig,
    tol: f64,
    max_iter: usize,
) -> Result<EnhanceResult> {
    let features = extract_features(img, feature_cfg)?;
    // The model's input stacks the measured parameter triple on top of the
    // extracted feature vector, matching the training-side layout.
    if features.len() + 3 != model.dims.d {
        return Err(Error::Dimension {
            op: "enhance",
            detail: format!(
                "the parameter triple plus the {}-value feature extractor gives {} inputs but the model was trained with D = {}",
                features.len(),
                features.len() + 3,
                model.dims.d
            ),
        });
    }
    if model.dims.k != 3 {
        return Err(Error::Dimension {
            op: "enhance",
            detail: format!(
                "the model predicts {} parameters per version, the image pipeline controls 3",
                model.dims.k
            ),
        });
    }
    let measured = measure_params(img);
    let a = measured.as_array();
    let mut inputs = Vec::with_capacity(model.dims.d);
    inputs.extend_from_slice(&a);
    inputs.extend_from_slice(&features);
    let raw = predict(model, &inputs, &a)?;
    let clipped = match clip_cfg {
        Some(cfg) => clip(&raw, &a, cfg)?,
        None => raw.clone(),
    };
    let mut versions = Vec::with_capacity(raw.rows());
    for j in 0..raw.rows() {
        let target = ImageParams::from_array([
            clipped.get(j, 0).clamp(0.0, 1.0),
            clipped.get(j, 1).clamp(0.0, 1.0),
            clipped.get(j, 2).clamp(0.0, 1.0),
        ]);
        let outcome = apply_params(img, &target, tol, max_iter)?;
        versions.push(EnhancedVersion {
            predicted: [raw.get(j, 0), raw.get(j, 1), raw.get(j, 2)],
            clipped: [clipped.get(j, 0), clipped.get(j, 1), clipped.get(j, 2)],
            outcome,
        });
    }
    Ok(EnhanceResult { measured, versions })
}

/// Writes version_1.png .. version_M.png plus parameters.csv (predicted,
/// clipped, and achieved values per version).
pub fn write_enhance_outputs(result: &EnhanceResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut csv = String::from(
        "version,predicted_saturation,predicted_brightness,predicted_contrast,\
         clipped_saturation,clipped_brightness,clipped_contrast,\
         achieved_saturation,achieved_brightness,achieved_contrast\n",
    );
    for (j, v) in result.versions.iter().enumerate() {
        save_png(&v.outcome.image, &dir.join(format!("version_{}.png", j + 1)))?;
        csv.push_str(&(j + 1).to_string());
        let achieved = v.outcome.achieved.as_array();
        for value in v.predicted.iter().chain(&v.clipped).chain(&achieved) {
            csv.push(',');
            csv.push_str(&format_f64(*value));
        }
        csv.push('\n');
    }
    atomic_write(&dir.join("parameters.csv"), csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fbptf_core::matrix::Matrix;
    use fbptf_core::model::{ModelDims, Snapshot};
    use fbptf_imaging::corpus::desk_corpus;
    use fbptf_imaging::{DEFAULT_APPLY_MAX_ITER, DEFAULT_APPLY_TOL};

    /// Small extractor so test models stay light; D = 2*2*2 + 3*4 + 3.
    fn small_features() -> FeatureConfig {
        FeatureConfig { hue_bins: 2, sat_bins: 2, val_bins: 2, grid_rows: 2, grid_cols: 2 }
    }

    /// Model whose snapshots predict `deltas[j]` on every parameter of
    /// version j: P = 0, Q = e_0, V[0][j] = deltas[j], T[0] = ones.
    fn offset_model(d: usize, deltas: &[f64]) -> TrainedModel {
        let m = deltas.len();
        let mut q = vec![0.0; d];
        q[0] = 1.0;
        let mut v = Matrix::zeros(d, m);
        for (j, delta) in deltas.iter().enumerate() {
            v.set(0, j, *delta);
        }
        let mut t = Matrix::zeros(d, 3);
        for kk in 0..3 {
            t.set(0, kk, 1.0);
        }
        TrainedModel {
            dims: ModelDims { n: 1, m, k: 3, d },
            samples: vec![Snapshot { p: Matrix::zeros(d, d), q, v, t, u: None }],
            rmse_trace: Vec::new(),
            sweeps: 1,
            burn_in: 0,
            seed: 0,
        }
    }

    #[test]
    fn zero_delta_model_reproduces_the_input_parameters() {
        let cfg = small_features();
        let img = &desk_corpus(1, 5)[0];
        let model = offset_model(3 + cfg.feature_len(), &[0.0, 0.0]);
        let result = enhance_image(
            &img,
            &model,
            None,
            &cfg,
            DEFAULT_APPLY_TOL,
            DEFAULT_APPLY_MAX_ITER,
        )
        .unwrap();
        let a = result.measured.as_array();
        assert_eq!(result.versions.len(), 2);
        for v in &result.versions {
            for kk in 0..3 {
                assert_eq!(v.predicted[kk].to_bits(), a[kk].to_bits(), "zero delta shifts A");
            }
            let achieved = v.outcome.achieved.as_array();
            for kk in 0..3 {
                assert!(
                    (achieved[kk] - a[kk]).abs() <= DEFAULT_APPLY_TOL,
                    "axis {kk}: achieved {} vs input {}",
                    achieved[kk],
                    a[kk]
                );
            }
        }
    }

    #[test]
    fn zero_multiplier_band_collapses_predictions_to_the_input() {
        let cfg = small_features();
        let img = &desk_corpus(1, 6)[0];
        let model = offset_model(3 + cfg.feature_len(), &[0.2, -0.1]);
        let band = ClipConfig { lambda: vec![0.0; 3], zeta: vec![0.0; 3] };
        let result = enhance_image(
            &img,
            &model,
            Some(&band),
            &cfg,
            DEFAULT_APPLY_TOL,
            DEFAULT_APPLY_MAX_ITER,
        )
        .unwrap();
        let a = result.measured.as_array();
        for v in &result.versions {
            for kk in 0..3 {
                assert_eq!(v.clipped[kk].to_bits(), a[kk].to_bits(), "band is not degenerate");
                assert_ne!(v.predicted[kk].to_bits(), a[kk].to_bits(), "prediction moved");
            }
        }
    }

    #[test]
    fn achieved_parameters_track_clipped_predictions_on_desk_images() {
        let cfg = small_features();
        let model = offset_model(3 + cfg.feature_len(), &[0.02, -0.03]);
        let band = ClipConfig::enhancement_default();
        for (i, img) in desk_corpus(3, 41).iter().enumerate() {
            let result = enhance_image(
                img,
                &model,
                Some(&band),
                &cfg,
                DEFAULT_APPLY_TOL,
                DEFAULT_APPLY_MAX_ITER,
            )
            .unwrap();
            for (j, v) in result.versions.iter().enumerate() {
                let achieved = v.outcome.achieved.as_array();
                for kk in 0..3 {
                    let target = v.clipped[kk].clamp(0.0, 1.0);
                    assert!(
                        (achieved[kk] - target).abs() <= 0.02,
                        "image {i} version {j} axis {kk}: achieved {} vs clipped {target}",
                        achieved[kk]
                    );
                }
            }
        }
    }

    #[test]
    fn feature_length_mismatch_names_both_dimensions() {
        let cfg = small_features();
        let img = &desk_corpus(1, 7)[0];
        let model = offset_model(10, &[0.0]);
        let err = enhance_image(
            &img,
            &model,
            None,
            &cfg,
            DEFAULT_APPLY_TOL,
            DEFAULT_APPLY_MAX_ITER,
        )
        .unwrap_err()
        .to_string();
        assert!(
            err.contains(&cfg.feature_len().to_string()) && err.contains("10"),
            "error must print both lengths, got: {err}"
        );
    }

    #[test]
    fn outputs_land_on_disk_with_a_parameter_table() {
        let cfg = small_features();
        let img = &desk_corpus(1, 8)[0];
        let model = offset_model(3 + cfg.feature_len(), &[0.01, -0.01]);
        let result = enhance_image(
            &img,
            &model,
            Some(&ClipConfig::enhancement_default()),
            &cfg,
            DEFAULT_APPLY_TOL,
            DEFAULT_APPLY_MAX_ITER,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_enhance_outputs(&result, dir.path()).unwrap();
        assert!(dir.path().join("version_1.png").is_file());
        assert!(dir.path().join("version_2.png").is_file());
        let csv = std::fs::read_to_string(dir.path().join("parameters.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("version,predicted_saturation"));
        let reloaded = fbptf_imaging::load_image(&dir.path().join("version_1.png")).unwrap();
        assert_eq!(&reloaded, &result.versions[0].outcome.image);
    }
}
