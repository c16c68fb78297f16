//! Deterministic synthetic benchmark generator.
//!
//! Each item i gets K=3 base parameters A_i ~ U[0,1]. Features and
//! enhanced-version parameters are nonlinear maps of A:
//!
//!   feature law: F_ji = r1^A1 + sigmoid(r2*A2) + A3^r3, coefficients
//!               drawn fresh per element (j, i);
//!   version law: A'_{k,i,m} = eta * (same map, coefficients drawn once
//!               per (k, m) target) + (1 - eta) * s * ||F_i||_2.
//!
//! The per-element coefficient draws make each feature a noisy encoding
//! of A_i rather than a fixed basis function of it: the version values
//! depend on the realized norm ||F_i||_2, so part of A' is predictable
//! only from the features themselves, while the per-(k, m) maps keep the
//! version structure learnable. The mixing weight eta balances the two
//! terms: at eta = 0 every version collapses to the scaled feature norm,
//! at eta = 1 the feature term vanishes. The normalizer s = 1/sqrt(L)
//! keeps the ~L-dimensional norm commensurate with the O(1) nonlinear
//! term.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{atomic_write, format_f64, Matrix};
use crate::rng::RngStream;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffTriple {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Item count.
    pub n: usize,
    /// Base-parameter dimension; the generator's functional form needs 3.
    pub k: usize,
    /// Feature dimension.
    pub l: usize,
    /// Enhanced versions per item.
    pub m: usize,
    /// Mixing weight between the nonlinear term and the feature norm.
    pub eta: f64,
    pub r1_range: (f64, f64),
    pub r2_range: (f64, f64),
    pub r3_range: (f64, f64),
    /// Scale on ||F_i||; None means 1/sqrt(l).
    pub norm_scale: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 1000,
            k: 3,
            l: 50,
            m: 4,
            eta: 0.5,
            r1_range: (0.5, 2.0),
            r2_range: (-3.0, 3.0),
            r3_range: (0.5, 3.0),
            norm_scale: None,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k != 3 {
            return Err(Error::Invalid {
                op: "SyntheticConfig::validate",
                detail: format!("the generator's functional form needs k = 3, got {}", self.k),
            });
        }
        if self.n == 0 || self.l == 0 || self.m == 0 {
            return Err(Error::Invalid {
                op: "SyntheticConfig::validate",
                detail: "n, l, m must be positive".to_string(),
            });
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Invalid {
                op: "SyntheticConfig::validate",
                detail: format!("eta {} outside [0, 1]", self.eta),
            });
        }
        for (name, (lo, hi)) in
            [("r1", self.r1_range), ("r2", self.r2_range), ("r3", self.r3_range)]
        {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Invalid {
                    op: "SyntheticConfig::validate",
                    detail: format!("{name} range ({lo}, {hi}) is not a proper interval"),
                });
            }
        }
        if self.r1_range.0 <= 0.0 || self.r3_range.0 <= 0.0 {
            return Err(Error::Invalid {
                op: "SyntheticConfig::validate",
                detail: "r1 and r3 must stay positive for the power terms".to_string(),
            });
        }
        if let Some(s) = self.norm_scale {
            if !(s > 0.0) {
                return Err(Error::Invalid {
                    op: "SyntheticConfig::validate",
                    detail: format!("norm_scale {s} must be positive"),
                });
            }
        }
        Ok(())
    }

    pub fn effective_norm_scale(&self) -> f64 {
        self.norm_scale.unwrap_or(1.0 / (self.l as f64).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    /// Base parameters, K x N, entries in [0, 1].
    pub a: Matrix,
    /// Features, L x N.
    pub f: Matrix,
    /// Enhanced-version parameters, indexed (item, version, parameter).
    pub a_prime: Tensor3,
    /// Per-(parameter, version) coefficient draws.
    pub version_coeffs: Vec<Vec<CoeffTriple>>,
    pub config: SyntheticConfig,
}

/// The shared nonlinear map: r1^a1 + sigmoid(r2*a2) + a3^r3.
pub fn nonlinear_map(a: [f64; 3], c: CoeffTriple) -> f64 {
    c.r1.powf(a[0]) + 1.0 / (1.0 + (-c.r2 * a[1]).exp()) + a[2].powf(c.r3)
}

fn draw_coeffs(cfg: &SyntheticConfig, rng: &mut impl Rng) -> CoeffTriple {
    CoeffTriple {
        r1: rng.random_range(cfg.r1_range.0..cfg.r1_range.1),
        r2: rng.random_range(cfg.r2_range.0..cfg.r2_range.1),
        r3: rng.random_range(cfg.r3_range.0..cfg.r3_range.1),
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let root = RngStream::root(cfg.seed);

    let a = {
        let mut rng = root.child("a", 0).rng();
        Matrix::from_fn(cfg.k, cfg.n, |_, _| rng.random::<f64>())
    };
    let a_col = |i: usize| [a.get(0, i), a.get(1, i), a.get(2, i)];

    let mut f = Matrix::zeros(cfg.l, cfg.n);
    for j in 0..cfg.l {
        let mut rng = root.child("feature_coeff", j as u64).rng();
        let row = f.row_mut(j);
        for (i, v) in row.iter_mut().enumerate() {
            *v = nonlinear_map(a_col(i), draw_coeffs(cfg, &mut rng));
        }
    }

    let s = cfg.effective_norm_scale();
    let norms: Vec<f64> = (0..cfg.n)
        .map(|i| (0..cfg.l).map(|j| f.get(j, i) * f.get(j, i)).sum::<f64>().sqrt())
        .collect();

    let version_coeffs: Vec<Vec<CoeffTriple>> = (0..cfg.k)
        .map(|kk| {
            (0..cfg.m)
                .map(|mm| {
                    let mut rng = root.child("version_coeff", (kk * cfg.m + mm) as u64).rng();
                    draw_coeffs(cfg, &mut rng)
                })
                .collect()
        })
        .collect();

    let mut values = vec![0.0; cfg.n * cfg.m * cfg.k];
    let mut pos = 0;
    for i in 0..cfg.n {
        for mm in 0..cfg.m {
            for kk in 0..cfg.k {
                let c = version_coeffs[kk][mm];
                values[pos] =
                    cfg.eta * nonlinear_map(a_col(i), c) + (1.0 - cfg.eta) * s * norms[i];
                pos += 1;
            }
        }
    }
    let a_prime = Tensor3::new(cfg.n, cfg.m, cfg.k, values)?;
    if !a_prime.values().iter().all(|v| v.is_finite()) || !f.is_finite() {
        return Err(Error::NonFiniteResult { op: "synthetic::generate" });
    }

    Ok(SyntheticDataset { a, f, a_prime, version_coeffs, config: cfg.clone() })
}

/// Seeded near-equal partition: every index lands in exactly one test
/// fold; the first (n mod folds) folds take the extra element.
pub fn split_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 || folds > n {
        return Err(Error::Invalid {
            op: "split_folds",
            detail: format!("need 2 <= folds <= n, got folds {folds} for n {n}"),
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::root(seed).child("folds", 0).rng();
    // Fisher-Yates, fixed traversal order for reproducibility.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for fold in 0..folds {
        let size = base + usize::from(fold < extra);
        let test: Vec<usize> = perm[start..start + size].to_vec();
        let train: Vec<usize> =
            perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        out.push((train, test));
        start += size;
    }
    Ok(out)
}

/// Writes the standard dataset directory: features.csv (N rows x L),
/// params.csv (N x K), versions.csv (N*M rows: image_id, version_id,
/// then K parameters; both ids 0-based), manifest.txt echoing the config.
pub fn write_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let cfg = &ds.config;

    atomic_write(&dir.join("features.csv"), ds.f.transpose().to_csv_string().as_bytes())?;
    atomic_write(&dir.join("params.csv"), ds.a.transpose().to_csv_string().as_bytes())?;

    let mut versions = String::new();
    for i in 0..cfg.n {
        for mm in 0..cfg.m {
            versions.push_str(&i.to_string());
            versions.push(',');
            versions.push_str(&mm.to_string());
            for kk in 0..cfg.k {
                versions.push(',');
                versions.push_str(&format_f64(ds.a_prime.get(i, mm, kk)));
            }
            versions.push('\n');
        }
    }
    atomic_write(&dir.join("versions.csv"), versions.as_bytes())?;

    let manifest = format!(
        "n={}\nk={}\nl={}\nm={}\neta={}\nr1_range={},{}\nr2_range={},{}\nr3_range={},{}\nnorm_scale={}\nseed={}\n",
        cfg.n,
        cfg.k,
        cfg.l,
        cfg.m,
        format_f64(cfg.eta),
        format_f64(cfg.r1_range.0),
        format_f64(cfg.r1_range.1),
        format_f64(cfg.r2_range.0),
        format_f64(cfg.r2_range.1),
        format_f64(cfg.r3_range.0),
        format_f64(cfg.r3_range.1),
        format_f64(cfg.effective_norm_scale()),
        cfg.seed
    );
    atomic_write(&dir.join("manifest.txt"), manifest.as_bytes())
}
