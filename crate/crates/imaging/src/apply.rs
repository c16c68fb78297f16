//! Applies target parameters to an image by global per-channel scalings.
//!
//! Contrast first: V deviations are scaled about the current mean with the
//! factor found by bisection (changing contrast can shift the other two
//! measurements through clamping, so it leads). Then brightness and
//! saturation alternate as direct ratio scalings, re-measuring after each.
//! Passes repeat while any axis is off-target and has iteration budget.
//! Every scaling lands at or below its target (clamping only loses mass),
//! and a final downward contrast correction, which moves neither mean V
//! nor S, restores that guarantee if a late brightness scaling pushed the
//! spread up. The achieved values therefore never exceed the targets by
//! more than quantization noise.

use crate::measure::{mean, population_std, HsvBuffer, ImageParams};
use crate::ImageRGB;
use fbptf_core::{Error, Result};

pub const DEFAULT_APPLY_TOL: f64 = 0.01;
pub const DEFAULT_APPLY_MAX_ITER: usize = 40;

/// Tiny one-sided slack: a landing this far above target still counts as
/// "at target" (float noise from exact ratio scalings).
const OVERSHOOT_EPS: f64 = 1e-9;

/// Result of [`apply_params`]: the quantized image, its re-measured
/// parameters, and per-axis convergence in (saturation, brightness,
/// contrast) order. Convergence is judged on the float buffer before
/// quantization; `achieved` re-measures the emitted 8-bit pixels, so the
/// two can differ by quantization noise (about 1/255 per axis).
#[derive(Debug, Clone)]
pub struct ApplyOutcome {
    pub image: ImageRGB,
    pub achieved: ImageParams,
    pub converged: [bool; 3],
}

#[inline]
fn at_target(value: f64, target: f64, tol: f64) -> bool {
    target - tol <= value && value <= target + OVERSHOOT_EPS
}

/// Scales V deviations about the current mean until the population std
/// lands in [target - tol, target]. Each candidate evaluation costs one
/// unit of `budget`. Returns whether the axis converged.
fn contrast_stage(v: &mut Vec<f64>, target: f64, tol: f64, budget: &mut usize) -> bool {
    let m0 = mean(v);
    let s0 = population_std(v, m0);
    if at_target(s0, target, tol) {
        return true;
    }
    if s0 == 0.0 {
        // Zero spread cannot be scaled into existence.
        return target <= tol;
    }
    let eval = |c: f64| -> (Vec<f64>, f64) {
        let buf: Vec<f64> = v.iter().map(|&x| (m0 + c * (x - m0)).clamp(0.0, 1.0)).collect();
        let m = mean(&buf);
        let s = population_std(&buf, m);
        (buf, s)
    };
    // Bracket [lo, hi] with std(lo) <= target <= std(hi).
    let (mut lo, mut hi);
    if s0 < target {
        lo = 1.0;
        hi = 2.0;
        loop {
            if *budget == 0 {
                return false;
            }
            let (_, s) = eval(hi);
            *budget -= 1;
            if s >= target {
                break;
            }
            hi *= 2.0;
            if hi > 1e9 {
                // Clamping saturates the spread below the target.
                let (buf, s) = eval(1e9);
                *v = buf;
                return at_target(s, target, tol);
            }
        }
    } else {
        lo = 0.0;
        hi = 1.0;
    }
    let mut best: Option<Vec<f64>> = None;
    while *budget > 0 {
        *budget -= 1;
        let mid = 0.5 * (lo + hi);
        let (buf, s) = eval(mid);
        if s > target {
            hi = mid;
        } else {
            lo = mid;
            let done = at_target(s, target, tol);
            best = Some(buf);
            if done {
                *v = best.unwrap();
                return true;
            }
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    if let Some(buf) = best {
        *v = buf;
    }
    false
}

/// Ratio-scales a channel toward a target mean, iterating because
/// clamping at 1 can absorb part of an upward step. Never overshoots.
fn scale_stage(x: &mut [f64], target: f64, tol: f64, budget: &mut usize) -> bool {
    loop {
        let cur = mean(x);
        if at_target(cur, target, tol) {
            return true;
        }
        if *budget == 0 {
            return false;
        }
        if cur <= 1e-12 {
            // All-zero channel; no scaling can raise the mean.
            return false;
        }
        let b = target / cur;
        for e in x.iter_mut() {
            *e = (*e * b).clamp(0.0, 1.0);
        }
        *budget -= 1;
        if (mean(x) - cur).abs() < 1e-15 {
            // Fully clamped; further scaling cannot move the mean.
            return at_target(mean(x), target, tol);
        }
    }
}

/// Adjusts `img` toward `target`, returning the enhanced image together
/// with the achieved parameters and per-axis convergence flags. `tol` is
/// the per-axis acceptance band and `max_iter` the per-axis evaluation
/// budget (defaults [`DEFAULT_APPLY_TOL`], [`DEFAULT_APPLY_MAX_ITER`]).
pub fn apply_params(
    img: &ImageRGB,
    target: &ImageParams,
    tol: f64,
    max_iter: usize,
) -> Result<ApplyOutcome> {
    target.validate_unit_range()?;
    if !(tol > 0.0 && tol.is_finite()) || max_iter == 0 {
        return Err(Error::Invalid {
            op: "apply_params",
            detail: format!("tol {tol} must be positive and max_iter {max_iter} nonzero"),
        });
    }
    let mut buf = HsvBuffer::from_image(img);
    // Budgets in (saturation, brightness, contrast) order.
    let mut budget = [max_iter; 3];
    for _pass in 0..max_iter {
        contrast_stage(&mut buf.v, target.contrast, tol, &mut budget[2]);
        scale_stage(&mut buf.v, target.brightness, tol, &mut budget[1]);
        scale_stage(&mut buf.s, target.saturation, tol, &mut budget[0]);
        let cur = buf.measure();
        let done = at_target(cur.saturation, target.saturation, tol)
            && at_target(cur.brightness, target.brightness, tol)
            && at_target(cur.contrast, target.contrast, tol);
        if done || budget == [0, 0, 0] {
            break;
        }
    }
    // Late brightness scalings multiply the V spread; one exact downward
    // correction about the mean restores contrast without moving mean V
    // or S (no clamping can occur when shrinking toward the mean).
    let m = mean(&buf.v);
    let s = population_std(&buf.v, m);
    if s > target.contrast + OVERSHOOT_EPS {
        let c = target.contrast / s;
        for e in buf.v.iter_mut() {
            *e = m + c * (*e - m);
        }
    }
    let cur = buf.measure();
    let converged = [
        (cur.saturation - target.saturation).abs() <= tol,
        (cur.brightness - target.brightness).abs() <= tol,
        (cur.contrast - target.contrast).abs() <= tol,
    ];
    let image = buf.to_image();
    let achieved = crate::measure::measure_params(&image);
    Ok(ApplyOutcome { image, achieved, converged })
}
