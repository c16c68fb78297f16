//! Third-order tensors over (image, version, parameter) cells.

use crate::error::{Error, Result};

/// Dense N x M x K value array indexed as (image i, version j, parameter k).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, m: usize, k: usize) -> Self {
        Tensor3 { n, m, k, values: vec![0.0; n * m * k] }
    }

    pub fn new(n: usize, m: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * m * k {
            return Err(Error::Dimension {
                op: "Tensor3::new",
                detail: format!("{n}x{m}x{k} needs {} values, got {}", n * m * k, values.len()),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / (m * k).max(1), col: pos % (m * k).max(1) });
        }
        Ok(Tensor3 { n, m, k, values })
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, kk: usize) -> usize {
        debug_assert!(i < self.n && j < self.m && kk < self.k);
        (i * self.m + j) * self.k + kk
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, kk: usize) -> f64 {
        self.values[self.idx(i, j, kk)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, kk: usize, v: f64) {
        let idx = self.idx(i, j, kk);
        self.values[idx] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Observed-cell tensor handed to the Gibbs sampler: values plus a 0/1 mask.
/// Masked-out cells are ignored by every likelihood term, so their stored
/// values are irrelevant. An all-zero mask is legal for the sampler (it then
/// reproduces the prior); dataset loading enforces non-empty observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTensor {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    values: Vec<f64>,
    mask: Vec<u8>,
}

impl DeltaTensor {
    pub fn new(n: usize, m: usize, k: usize, values: Vec<f64>, mask: Vec<u8>) -> Result<Self> {
        let len = n * m * k;
        if values.len() != len || mask.len() != len {
            return Err(Error::Dimension {
                op: "DeltaTensor::new",
                detail: format!(
                    "{n}x{m}x{k} needs {len} values and mask entries, got {} and {}",
                    values.len(),
                    mask.len()
                ),
            });
        }
        // Only observed cells must be finite; masked-out cells are never read.
        for (pos, (v, ms)) in values.iter().zip(&mask).enumerate() {
            if *ms != 0 && !v.is_finite() {
                return Err(Error::NonFinite {
                    row: pos / (m * k).max(1),
                    col: pos % (m * k).max(1),
                });
            }
        }
        Ok(DeltaTensor { n, m, k, values, mask })
    }

    /// Fully observed tensor.
    pub fn dense(t: &Tensor3) -> Self {
        DeltaTensor {
            n: t.n,
            m: t.m,
            k: t.k,
            values: t.values().to_vec(),
            mask: vec![1; t.values().len()],
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, kk: usize) -> usize {
        debug_assert!(i < self.n && j < self.m && kk < self.k);
        (i * self.m + j) * self.k + kk
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, kk: usize) -> f64 {
        self.values[self.idx(i, j, kk)]
    }

    #[inline]
    pub fn observed(&self, i: usize, j: usize, kk: usize) -> bool {
        self.mask[self.idx(i, j, kk)] != 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|m| **m != 0).count()
    }

    /// Observed (j, k, value) triples per image row.
    pub fn cells_by_image(&self) -> Vec<Vec<(usize, usize, f64)>> {
        let mut out = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for j in 0..self.m {
                for kk in 0..self.k {
                    if self.observed(i, j, kk) {
                        out[i].push((j, kk, self.value(i, j, kk)));
                    }
                }
            }
        }
        out
    }

    /// Observed (i, k, value) triples per version column.
    pub fn cells_by_version(&self) -> Vec<Vec<(usize, usize, f64)>> {
        let mut out = vec![Vec::new(); self.m];
        for i in 0..self.n {
            for j in 0..self.m {
                for kk in 0..self.k {
                    if self.observed(i, j, kk) {
                        out[j].push((i, kk, self.value(i, j, kk)));
                    }
                }
            }
        }
        out
    }

    /// Observed (i, j, value) triples per parameter slice.
    pub fn cells_by_param(&self) -> Vec<Vec<(usize, usize, f64)>> {
        let mut out = vec![Vec::new(); self.k];
        for i in 0..self.n {
            for j in 0..self.m {
                for kk in 0..self.k {
                    if self.observed(i, j, kk) {
                        out[kk].push((i, j, self.value(i, j, kk)));
                    }
                }
            }
        }
        out
    }
}
