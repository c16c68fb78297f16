//! Small numeric utilities shared across the model and the harness.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Trilinear inner product sum_d u_d v_d t_d of three equal-length vectors.
#[inline]
pub fn cp_inner(u: &[f64], v: &[f64], t: &[f64]) -> f64 {
    debug_assert!(u.len() == v.len() && v.len() == t.len());
    let mut s = 0.0;
    for i in 0..u.len() {
        s += u[i] * v[i] * t[i];
    }
    s
}

/// Checked variant for callers handing in outside data.
pub fn cp_inner_checked(u: &[f64], v: &[f64], t: &[f64]) -> Result<f64> {
    if u.len() != v.len() || v.len() != t.len() {
        return Err(Error::Dimension {
            op: "cp_inner",
            detail: format!("lengths {} / {} / {}", u.len(), v.len(), t.len()),
        });
    }
    let s = cp_inner(u, v, t);
    if !s.is_finite() {
        return Err(Error::NonFiniteResult { op: "cp_inner" });
    }
    Ok(s)
}

/// Sum of Euclidean row norms of a matrix (the l2,1 norm).
pub fn l21_norm(x: &Matrix) -> f64 {
    (0..x.rows())
        .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

/// Root-mean-square error pooled over cells with mask = 1. Rejects empty
/// masks and reports a numerical-domain error on non-finite differences.
pub fn rmse(pred: &[f64], truth: &[f64], mask: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() || truth.len() != mask.len() {
        return Err(Error::Dimension {
            op: "rmse",
            detail: format!("lengths {} / {} / {}", pred.len(), truth.len(), mask.len()),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if mask[i] == 0 {
            continue;
        }
        let d = pred[i] - truth[i];
        if !d.is_finite() {
            return Err(Error::NonFiniteResult { op: "rmse" });
        }
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Invalid { op: "rmse", detail: "mask selects no cells".to_string() });
    }
    Ok((sum / count as f64).sqrt())
}
