//! Conjugate Gaussian-Wishart updates for factor-matrix hyperparameters.
//!
//! For column samples u_1..u_n of a D-dimensional factor with prior
//! N(mu | mu0, (beta0 Lambda)^-1) W(Lambda | W0, nu0), the posterior is the
//! same family with
//!
//!   mu0*   = (beta0 mu0 + n ubar) / (beta0 + n)
//!   beta0* = beta0 + n
//!   nu0*   = nu0 + n
//!   W0*^-1 = W0^-1 + n Sbar + (beta0 n / (beta0 + n)) (mu0 - ubar)(mu0 - ubar)^T
//!
//! where ubar is the column mean and Sbar the biased (1/n) scatter about it.

use crate::error::{Error, Result};
use crate::matrix::{spd_inverse, Matrix};
use crate::rng::StreamRng;
use crate::sampling::{sample_mvn, sample_wishart};

#[derive(Debug, Clone)]
pub struct GaussianWishartPrior {
    pub mu0: Vec<f64>,
    pub beta0: f64,
    pub w0: Matrix,
    pub nu0: f64,
}

impl GaussianWishartPrior {
    /// The standard diffuse prior used by the factor model: mu0 = 0,
    /// beta0 = 1, W0 = I, nu0 = D.
    pub fn standard(d: usize) -> Self {
        GaussianWishartPrior {
            mu0: vec![0.0; d],
            beta0: 1.0,
            w0: Matrix::identity(d),
            nu0: d as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu0.len();
        if self.w0.rows() != d || self.w0.cols() != d {
            return Err(Error::Dimension {
                op: "gw_posterior",
                detail: format!("mu0 len {d} vs W0 {}x{}", self.w0.rows(), self.w0.cols()),
            });
        }
        if self.beta0 <= 0.0 || self.nu0 < d as f64 {
            return Err(Error::Invalid {
                op: "gw_posterior",
                detail: format!("beta0 {} must be > 0 and nu0 {} must be >= {d}", self.beta0, self.nu0),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GaussianWishartPosterior {
    pub mu_star: Vec<f64>,
    pub beta_star: f64,
    pub w_star: Matrix,
    pub nu_star: f64,
}

/// Computes the posterior given `columns` holding the n factor columns of a
/// D x n matrix. With n = 0 the posterior equals the prior exactly.
pub fn gw_posterior(prior: &GaussianWishartPrior, columns: &Matrix) -> Result<GaussianWishartPosterior> {
    prior.validate()?;
    let d = prior.mu0.len();
    if columns.rows() != d {
        return Err(Error::Dimension {
            op: "gw_posterior",
            detail: format!("columns have dimension {}, prior has {d}", columns.rows()),
        });
    }
    let n = columns.cols();
    if n == 0 {
        return Ok(GaussianWishartPosterior {
            mu_star: prior.mu0.clone(),
            beta_star: prior.beta0,
            w_star: prior.w0.clone(),
            nu_star: prior.nu0,
        });
    }
    let nf = n as f64;
    let mut ubar = vec![0.0; d];
    for c in 0..n {
        for r in 0..d {
            ubar[r] += columns.get(r, c);
        }
    }
    for v in &mut ubar {
        *v /= nf;
    }
    // n * Sbar accumulated directly as the centered scatter.
    let mut scatter = Matrix::zeros(d, d);
    for c in 0..n {
        for r in 0..d {
            let dr = columns.get(r, c) - ubar[r];
            for s in r..d {
                let ds = columns.get(s, c) - ubar[s];
                let v = scatter.get(r, s) + dr * ds;
                scatter.set(r, s, v);
            }
        }
    }
    for r in 0..d {
        for s in 0..r {
            scatter.set(r, s, scatter.get(s, r));
        }
    }

    let beta_star = prior.beta0 + nf;
    let nu_star = prior.nu0 + nf;
    let mu_star: Vec<f64> = prior
        .mu0
        .iter()
        .zip(&ubar)
        .map(|(m0, ub)| (prior.beta0 * m0 + nf * ub) / beta_star)
        .collect();

    let mut w_inv = spd_inverse(&prior.w0)?;
    w_inv.add_assign(&scatter);
    let coeff = prior.beta0 * nf / beta_star;
    for r in 0..d {
        let dr = prior.mu0[r] - ubar[r];
        for s in 0..d {
            let ds = prior.mu0[s] - ubar[s];
            let v = w_inv.get(r, s) + coeff * dr * ds;
            w_inv.set(r, s, v);
        }
    }
    let w_star = spd_inverse(&w_inv)?;
    Ok(GaussianWishartPosterior { mu_star, beta_star, w_star, nu_star })
}

/// Draws (mu, Lambda) from the posterior: Lambda ~ W(W*, nu*), then
/// mu ~ N(mu*, (beta* Lambda)^-1).
pub fn sample_gw(
    posterior: &GaussianWishartPosterior,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, Matrix)> {
    let lambda = sample_wishart(&posterior.w_star, posterior.nu_star, rng)?;
    let mut prec = lambda.clone();
    prec.scale(posterior.beta_star);
    let mu = sample_mvn(&posterior.mu_star, &prec, rng)?;
    Ok((mu, lambda))
}
