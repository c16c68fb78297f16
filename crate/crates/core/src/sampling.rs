//! Multivariate normal and Wishart sampling.
//!
//! The MVN sampler is parameterized by the precision matrix, which is what
//! the Gibbs conditionals produce: with precision L L^T, the draw is
//! mu + L^-T z for z ~ N(0, I). Wishart draws use the Bartlett
//! decomposition: W = (L A)(L A)^T with L the Cholesky factor of the scale,
//! A lower triangular with chi-distributed diagonal and standard normal
//! subdiagonal entries.

use rand::Rng;
use rand_distr::{ChiSquared, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::{solve_lower_transpose, Matrix};
use crate::rng::StreamRng;

pub fn standard_normal_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws from N(mean, precision^-1). Near-singular precisions get one shot
/// of diagonal jitter before the factorization is declared failed.
pub fn sample_mvn(mean: &[f64], precision: &Matrix, rng: &mut StreamRng) -> Result<Vec<f64>> {
    if precision.rows() != precision.cols() || precision.rows() != mean.len() {
        return Err(Error::Dimension {
            op: "sample_mvn",
            detail: format!(
                "mean len {} vs precision {}x{}",
                mean.len(),
                precision.rows(),
                precision.cols()
            ),
        });
    }
    let l = precision.cholesky_jittered()?;
    let z = standard_normal_vec(rng, mean.len());
    let y = solve_lower_transpose(&l, &z);
    Ok(mean.iter().zip(&y).map(|(m, v)| m + v).collect())
}

/// Draws from N(mu, precision^-1) given the canonical form
/// (precision, rhs = precision * mu). Factorizes once, reusing the factor
/// for both the mean solve and the noise transform; the draw distribution
/// is identical to `sample_mvn(mu, precision)` with the same generator.
pub fn sample_mvn_canonical(
    precision: &Matrix,
    rhs: &[f64],
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let l = precision.cholesky_jittered()?;
    let mu = crate::matrix::chol_solve_vec(&l, rhs);
    let z = standard_normal_vec(rng, rhs.len());
    let y = solve_lower_transpose(&l, &z);
    Ok(mu.iter().zip(&y).map(|(m, v)| m + v).collect())
}

/// Draws from the Wishart distribution W(scale, dof) with dof >= dim,
/// via the Bartlett decomposition. The mean is dof * scale.
pub fn sample_wishart(scale: &Matrix, dof: f64, rng: &mut StreamRng) -> Result<Matrix> {
    let d = scale.rows();
    if scale.cols() != d {
        return Err(Error::Dimension {
            op: "sample_wishart",
            detail: format!("scale {}x{} not square", scale.rows(), scale.cols()),
        });
    }
    if !(dof >= d as f64) {
        return Err(Error::Invalid {
            op: "sample_wishart",
            detail: format!("dof {dof} < dimension {d}"),
        });
    }
    let l = scale.cholesky_jittered()?;
    // Lower-triangular Bartlett factor: subdiagonal N(0,1), diagonal
    // sqrt(chi^2(dof - i)) for row i.
    let mut a = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..i {
            a.set(i, j, rng.sample(StandardNormal));
        }
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| Error::Invalid {
            op: "sample_wishart",
            detail: format!("chi-squared dof {}: {e}", dof - i as f64),
        })?;
        a.set(i, i, rng.sample(chi).max(0.0_f64).sqrt());
    }
    let la = l.mul(&a)?;
    la.mul(&la.transpose())
}
