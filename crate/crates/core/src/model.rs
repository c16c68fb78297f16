//! Feature-conditioned Bayesian CP factorization of the offset tensor.
//!
//! The observed data are offsets ΔR over (image i, version j, parameter k)
//! cells, modeled as ⟨U_i, V_j, T_k⟩ with Gaussian noise of precision
//! alpha. Per-image factors are tied to visual features by a row-sparse
//! affine map: Û = (FᵀP + 1Q)ᵀ. Inference is Gibbs sampling; each sweep
//! runs, in order:
//!
//! 1. alpha from its conjugate posterior over observed-cell residuals
//!    (residuals measured against Û, the feature reconstruction);
//! 2. the Gaussian-Wishart hyperparameters of Û, V, and T;
//! 3. every U column from its Gaussian conditional (parallel);
//! 4. the coupling refit: (P, Q) from the row-sparse solver with targets
//!    Uᵀ, then Û is rebuilt from features — with coupling off, Û := U,
//!    which is exactly the uncoupled tensor baseline;
//! 5. every V column, then every T column, both conditioned on Û.
//!
//! Prediction for an unseen image with features F_t averages
//! ⟨PᵀF_t + Q, V_j, T_k⟩ over retained post-burn-in snapshots and adds the
//! image's original parameters.
//!
//! Determinism: every random draw comes from a stream addressed by
//! (seed, sweep, block, index), so training is bitwise reproducible
//! regardless of thread count.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::iter::{IntoParallelIterator, ParallelIterator};

use crate::error::{Error, Result};
use crate::gw::{gw_posterior, sample_gw, GaussianWishartPrior};
use crate::l21::{assemble_problem, extract_pq, solve, L21Config};
use crate::matrix::{atomic_write, format_f64, Matrix};
use crate::rng::{RngStream, StreamRng};
use crate::sampling::{sample_mvn_canonical, sample_wishart, standard_normal_vec};
use crate::tensor::DeltaTensor;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Image count.
    pub n: usize,
    /// Enhanced versions per image.
    pub m: usize,
    /// Parameters per version.
    pub k: usize,
    /// Latent dimension; equals the feature length when coupling is on.
    pub d: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 || self.d == 0 {
            return Err(Error::Invalid {
                op: "ModelDims::validate",
                detail: format!("all dims must be positive, got {self:?}"),
            });
        }
        Ok(())
    }
}

/// Hyperpriors for the factor matrices and the noise precision, plus the
/// latent initialization scales.
#[derive(Debug, Clone)]
pub struct HyperPriorConfig {
    /// Gaussian-Wishart prior shared by the Û, V, and T hyperparameters.
    pub gw: GaussianWishartPrior,
    /// Scale of the 1x1 Wishart prior on the noise precision.
    pub alpha_scale: f64,
    /// Degrees of freedom of the noise-precision prior.
    pub alpha_dof: f64,
    /// Variance of the latent initialization draws.
    pub sigma2_init: f64,
    /// Noise precision before the first sweep.
    pub alpha_init: f64,
}

impl HyperPriorConfig {
    pub fn default_for(d: usize) -> Self {
        HyperPriorConfig {
            gw: GaussianWishartPrior::standard(d),
            alpha_scale: 1.0,
            alpha_dof: 1.0,
            sigma2_init: 0.01,
            alpha_init: 2.0,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        self.gw.validate()?;
        if self.gw.mu0.len() != d {
            return Err(Error::Dimension {
                op: "HyperPriorConfig::validate",
                detail: format!("factor prior is for D={}, model has D={d}", self.gw.mu0.len()),
            });
        }
        if !(self.alpha_scale > 0.0)
            || !(self.alpha_dof >= 1.0)
            || !(self.sigma2_init > 0.0)
            || !(self.alpha_init > 0.0)
        {
            return Err(Error::Invalid {
                op: "HyperPriorConfig::validate",
                detail: "alpha_scale, sigma2_init, alpha_init must be positive; alpha_dof >= 1".to_string(),
            });
        }
        Ok(())
    }
}

/// Mean and precision of one factor matrix's column prior.
#[derive(Debug, Clone)]
pub struct FactorHyper {
    pub mu: Vec<f64>,
    pub lambda: Matrix,
}

#[derive(Debug, Clone)]
pub struct HyperState {
    pub alpha: f64,
    pub theta_u: FactorHyper,
    pub theta_v: FactorHyper,
    pub theta_t: FactorHyper,
}

#[derive(Debug, Clone)]
pub struct LatentState {
    /// Per-image factors, D x N.
    pub u: Matrix,
    /// Per-version factors, D x M.
    pub v: Matrix,
    /// Per-parameter factors, D x K.
    pub t: Matrix,
    /// Feature coupling map, D x D.
    pub p: Matrix,
    /// Coupling bias, length D.
    pub q: Vec<f64>,
    /// Feature reconstruction (FᵀP + 1Q)ᵀ, D x N; equals `u` when coupling
    /// is off.
    pub u_hat: Matrix,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub sweeps: usize,
    /// Discarded initial sweeps; defaults to 20% of `sweeps`.
    pub burn_in: Option<usize>,
    /// Settings for the per-sweep coupling refit.
    pub l21: L21Config,
    pub seed: u64,
    /// Off reproduces the uncoupled tensor baseline: no (P, Q) refit and
    /// Û := U each sweep.
    pub feature_coupling: bool,
    /// Record train/validation RMSE every this many sweeps; 0 disables.
    pub track_rmse_every: usize,
    /// Pins T to all-ones and skips its updates, collapsing the model to a
    /// two-factor matrix factorization over the unfolded tensor.
    pub fix_t_to_ones: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sweeps: 50,
            burn_in: None,
            l21: L21Config::default(),
            seed: 0,
            feature_coupling: true,
            track_rmse_every: 1,
            fix_t_to_ones: false,
        }
    }
}

impl TrainConfig {
    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.sweeps / 5)
    }
}

/// Scratch buffers for one factor-column conditional.
pub struct GibbsWorkspace {
    y: Vec<f64>,
    lambda: Matrix,
    rhs: Vec<f64>,
}

impl GibbsWorkspace {
    pub fn new(d: usize) -> Self {
        GibbsWorkspace { y: vec![0.0; d], lambda: Matrix::zeros(d, d), rhs: vec![0.0; d] }
    }
}

/// One retained posterior draw. `u` is populated only for coupling-off
/// runs, where predictions for in-tensor rows need the sampled factors
/// themselves.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub p: Matrix,
    pub q: Vec<f64>,
    pub v: Matrix,
    pub t: Matrix,
    pub u: Option<Matrix>,
}

impl Snapshot {
    /// Latent factor for an image seen only through its features:
    /// PᵀF_t + Q.
    pub fn coupled_factor(&self, f_t: &[f64]) -> Vec<f64> {
        let d = self.p.cols();
        let mut out = self.q.clone();
        for e in 0..self.p.rows() {
            let fe = f_t[e];
            if fe == 0.0 {
                continue;
            }
            let row = self.p.row(e);
            for dd in 0..d {
                out[dd] += fe * row[dd];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsePoint {
    /// 1-based count of completed sweeps.
    pub sweep: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub dims: ModelDims,
    pub samples: Vec<Snapshot>,
    pub rmse_trace: Vec<RmsePoint>,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Held-out cells scored during training. With `features` present the
/// rows are separate images predicted through the coupling; without, the
/// delta tensor must have the training tensor's shape and the rows fold in
/// through the current factor state.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub delta: DeltaTensor,
    pub features: Option<Matrix>,
}

/// Per-parameter clipping multipliers around the original value A:
/// predictions are limited to [A - zeta*A, A + lambda*A].
#[derive(Debug, Clone)]
pub struct ClipConfig {
    pub lambda: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl ClipConfig {
    /// Defaults for (saturation, brightness, contrast) parameter sets.
    pub fn enhancement_default() -> Self {
        ClipConfig { lambda: vec![0.4, 0.4, 0.05], zeta: vec![0.3, 0.3, 0.01] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.len() != self.zeta.len() {
            return Err(Error::Dimension {
                op: "ClipConfig::validate",
                detail: format!("lambda has {} entries, zeta {}", self.lambda.len(), self.zeta.len()),
            });
        }
        if self.lambda.iter().chain(&self.zeta).any(|v| !(*v >= 0.0)) {
            return Err(Error::Invalid {
                op: "ClipConfig::validate",
                detail: "clip multipliers must be non-negative".to_string(),
            });
        }
        Ok(())
    }
}

/// A cell address for batch prediction: `row` indexes into the feature
/// matrix (coupled) or the snapshot's U columns (fold-in).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRef {
    pub row: usize,
    pub j: usize,
    pub k: usize,
}

#[inline]
fn cp_cell(u: &Matrix, i: usize, v: &Matrix, j: usize, t: &Matrix, k: usize) -> f64 {
    let d = u.rows();
    let (un, vn, tn) = (u.cols(), v.cols(), t.cols());
    let (ud, vd, td) = (u.data(), v.data(), t.data());
    let mut s = 0.0;
    for r in 0..d {
        s += ud[r * un + i] * vd[r * vn + j] * td[r * tn + k];
    }
    s
}

/// Û = (FᵀP + 1Q)ᵀ as a D x N matrix.
pub fn reconstruct_u_hat(f: &Matrix, p: &Matrix, q: &[f64]) -> Result<Matrix> {
    let mut uh = p.tr_mul(f)?;
    for dd in 0..uh.rows() {
        let qd = q[dd];
        for v in uh.row_mut(dd) {
            *v += qd;
        }
    }
    Ok(uh)
}

/// Draws the initial latent state. V, T, and P entries are independent
/// N(0, sigma2_init). Q starts at zero. With features, U starts at the
/// feature reconstruction so the chain is feature-driven from the first
/// sweep; without, U is drawn like the other factors.
pub fn init_state(
    dims: &ModelDims,
    f: Option<&Matrix>,
    cfg: &HyperPriorConfig,
    stream: &RngStream,
) -> Result<(LatentState, HyperState)> {
    dims.validate()?;
    cfg.validate(dims.d)?;
    if let Some(f) = f {
        if f.rows() != dims.d || f.cols() != dims.n {
            return Err(Error::Dimension {
                op: "init_state",
                detail: format!(
                    "features must be {}x{}, got {}x{}",
                    dims.d,
                    dims.n,
                    f.rows(),
                    f.cols()
                ),
            });
        }
    }
    let sigma = cfg.sigma2_init.sqrt();
    let gaussian = |label: &str, rows: usize, cols: usize| -> Matrix {
        let mut rng = stream.child(label, 0).rng();
        let mut data = standard_normal_vec(&mut rng, rows * cols);
        for v in &mut data {
            *v *= sigma;
        }
        Matrix::from_parts(rows, cols, data)
    };
    let p = gaussian("p", dims.d, dims.d);
    let v = gaussian("v", dims.d, dims.m);
    let t = gaussian("t", dims.d, dims.k);
    let q = vec![0.0; dims.d];
    let (u, u_hat) = match f {
        Some(f) => {
            let uh = reconstruct_u_hat(f, &p, &q)?;
            (uh.clone(), uh)
        }
        None => {
            let u = gaussian("u", dims.d, dims.n);
            (u.clone(), u)
        }
    };
    let state = LatentState { u, v, t, p, q, u_hat };
    let hyper = HyperState {
        alpha: cfg.alpha_init,
        theta_u: FactorHyper { mu: vec![0.0; dims.d], lambda: Matrix::identity(dims.d) },
        theta_v: FactorHyper { mu: vec![0.0; dims.d], lambda: Matrix::identity(dims.d) },
        theta_t: FactorHyper { mu: vec![0.0; dims.d], lambda: Matrix::identity(dims.d) },
    };
    Ok((state, hyper))
}

/// Draws the noise precision from its conjugate posterior: a 1x1 Wishart
/// with dof = alpha_dof + #observed and inverse scale
/// 1/alpha_scale + sum of squared residuals against the reconstruction.
pub fn sample_alpha(
    state: &LatentState,
    data: &DeltaTensor,
    cfg: &HyperPriorConfig,
    stream: &RngStream,
) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for i in 0..data.n {
        for j in 0..data.m {
            for k in 0..data.k {
                if data.observed(i, j, k) {
                    let r = data.value(i, j, k) - cp_cell(&state.u_hat, i, &state.v, j, &state.t, k);
                    sq += r * r;
                    count += 1;
                }
            }
        }
    }
    let dof = cfg.alpha_dof + count as f64;
    let scale = 1.0 / (1.0 / cfg.alpha_scale + sq);
    let scale_m = Matrix::from_parts(1, 1, vec![scale]);
    let mut rng = stream.rng();
    let draw = sample_wishart(&scale_m, dof, &mut rng)?;
    let alpha = draw.get(0, 0);
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::NonFiniteResult { op: "sample_alpha" });
    }
    Ok(alpha)
}

/// Draws the Gaussian-Wishart hyperparameters for Û, V, and T. The Û
/// statistics deliberately come from the reconstruction, not the sampled
/// U, so the feature coupling shapes the factor prior.
pub fn sample_thetas(
    state: &LatentState,
    cfg: &HyperPriorConfig,
    stream: &RngStream,
) -> Result<(FactorHyper, FactorHyper, FactorHyper)> {
    let draw = |label: &str, columns: &Matrix| -> Result<FactorHyper> {
        let post = gw_posterior(&cfg.gw, columns)?;
        let mut rng = stream.child(label, 0).rng();
        let (mu, lambda) = sample_gw(&post, &mut rng)?;
        Ok(FactorHyper { mu, lambda })
    };
    Ok((
        draw("theta_u", &state.u_hat)?,
        draw("theta_v", &state.v)?,
        draw("theta_t", &state.t)?,
    ))
}

/// Draws one factor column from its Gaussian conditional. `cells` lists
/// the observed cells of this column's slice as (index into `a`, index
/// into `b`, target value); the conditional precision is
/// prior.lambda + alpha * sum of y yᵀ with y = a_col ∘ b_col, and the
/// canonical mean vector is prior.lambda * prior.mu + alpha * sum val * y.
pub fn sample_factor_column(
    prior: &FactorHyper,
    alpha: f64,
    cells: &[(usize, usize, f64)],
    a: &Matrix,
    b: &Matrix,
    ws: &mut GibbsWorkspace,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let d = prior.mu.len();
    ws.lambda.data_mut().copy_from_slice(prior.lambda.data());
    let rhs_init = prior.lambda.mul_vec(&prior.mu)?;
    ws.rhs.copy_from_slice(&rhs_init);
    let (an, bn) = (a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    for &(ja, kb, val) in cells {
        for r in 0..d {
            ws.y[r] = ad[r * an + ja] * bd[r * bn + kb];
        }
        for r in 0..d {
            let yr = alpha * ws.y[r];
            let row = ws.lambda.row_mut(r);
            for c in 0..d {
                row[c] += yr * ws.y[c];
            }
            ws.rhs[r] += yr * val;
        }
    }
    sample_mvn_canonical(&ws.lambda, &ws.rhs, rng)
}

fn attach_sweep(e: Error, sweep: usize) -> Error {
    match e {
        Error::SolverBreakdown { iter, detail } => {
            Error::SolverBreakdown { iter, detail: format!("sweep {}: {detail}", sweep + 1) }
        }
        other => other,
    }
}

/// Runs one full Gibbs sweep in place. `sweep` is the 0-based sweep index
/// used for stream addressing; `root` is the run's root stream.
pub fn gibbs_sweep(
    state: &mut LatentState,
    hyper: &mut HyperState,
    data: &DeltaTensor,
    f: Option<&Matrix>,
    cfg: &TrainConfig,
    hyper_cfg: &HyperPriorConfig,
    sweep: usize,
    root: &RngStream,
) -> Result<()> {
    let stream = root.child("sweep", sweep as u64);
    let d = state.u.rows();

    hyper.alpha = sample_alpha(state, data, hyper_cfg, &stream.child("alpha", 0))?;
    let (tu, tv, tt) = sample_thetas(state, hyper_cfg, &stream)?;
    hyper.theta_u = tu;
    hyper.theta_v = tv;
    if !cfg.fix_t_to_ones {
        hyper.theta_t = tt;
    }

    // Per-image factors, conditionally independent given V, T.
    let by_image = data.cells_by_image();
    let u_cols: Result<Vec<Vec<f64>>> = (0..data.n)
        .into_par_iter()
        .map_init(
            || GibbsWorkspace::new(d),
            |ws, i| {
                let mut rng = stream.child("u", i as u64).rng();
                sample_factor_column(
                    &hyper.theta_u,
                    hyper.alpha,
                    &by_image[i],
                    &state.v,
                    &state.t,
                    ws,
                    &mut rng,
                )
            },
        )
        .collect();
    for (i, col) in u_cols.map_err(|e| attach_sweep(e, sweep))?.into_iter().enumerate() {
        state.u.set_col(i, &col);
    }

    // Coupling refit and reconstruction.
    if cfg.feature_coupling {
        let f = f.ok_or_else(|| Error::Invalid {
            op: "gibbs_sweep",
            detail: "feature coupling is on but no feature matrix was given".to_string(),
        })?;
        let u_t = state.u.transpose();
        let problem = assemble_problem(f, &u_t, &cfg.l21).map_err(|e| attach_sweep(e, sweep))?;
        let sol = solve(&problem, &cfg.l21).map_err(|e| attach_sweep(e, sweep))?;
        let (p, q) = extract_pq(&sol, &problem)?;
        state.p = p;
        state.q = q;
        state.u_hat = reconstruct_u_hat(f, &state.p, &state.q)?;
    } else {
        state.u_hat.data_mut().copy_from_slice(state.u.data());
    }

    // Per-version factors conditioned on the reconstruction.
    let by_version = data.cells_by_version();
    let v_cols: Result<Vec<Vec<f64>>> = (0..data.m)
        .into_par_iter()
        .map_init(
            || GibbsWorkspace::new(d),
            |ws, j| {
                let mut rng = stream.child("v", j as u64).rng();
                sample_factor_column(
                    &hyper.theta_v,
                    hyper.alpha,
                    &by_version[j],
                    &state.u_hat,
                    &state.t,
                    ws,
                    &mut rng,
                )
            },
        )
        .collect();
    for (j, col) in v_cols.map_err(|e| attach_sweep(e, sweep))?.into_iter().enumerate() {
        state.v.set_col(j, &col);
    }

    // Per-parameter factors, from the reconstruction and the fresh V.
    if !cfg.fix_t_to_ones {
        let by_param = data.cells_by_param();
        let t_cols: Result<Vec<Vec<f64>>> = (0..data.k)
            .into_par_iter()
            .map_init(
                || GibbsWorkspace::new(d),
                |ws, k| {
                    let mut rng = stream.child("t", k as u64).rng();
                    sample_factor_column(
                        &hyper.theta_t,
                        hyper.alpha,
                        &by_param[k],
                        &state.u_hat,
                        &state.v,
                        ws,
                        &mut rng,
                    )
                },
            )
            .collect();
        for (k, col) in t_cols.map_err(|e| attach_sweep(e, sweep))?.into_iter().enumerate() {
            state.t.set_col(k, &col);
        }
    }
    Ok(())
}

/// RMSE of the current state's point predictions over a delta tensor's
/// observed cells, predicting each cell as ⟨u_like_i, V_j, T_k⟩.
fn point_rmse(u_like: &Matrix, v: &Matrix, t: &Matrix, delta: &DeltaTensor) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for i in 0..delta.n {
        for j in 0..delta.m {
            for k in 0..delta.k {
                if delta.observed(i, j, k) {
                    let diff = delta.value(i, j, k) - cp_cell(u_like, i, v, j, t, k);
                    sq += diff * diff;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Invalid { op: "point_rmse", detail: "no observed cells".to_string() });
    }
    let r = (sq / count as f64).sqrt();
    if !r.is_finite() {
        return Err(Error::NonFiniteResult { op: "point_rmse" });
    }
    Ok(r)
}

fn validation_point_rmse(vs: &ValidationSet, state: &LatentState) -> Result<f64> {
    match &vs.features {
        Some(fv) => {
            let uh = reconstruct_u_hat(fv, &state.p, &state.q)?;
            point_rmse(&uh, &state.v, &state.t, &vs.delta)
        }
        None => point_rmse(&state.u_hat, &state.v, &state.t, &vs.delta),
    }
}

/// Runs the full sampler and retains every post-burn-in state as a
/// snapshot. The RMSE trace records the current state's point predictions
/// (not the running average), which is what exposes the overfitting of
/// uncoupled runs on held-out cells.
pub fn train(
    data: &DeltaTensor,
    f: Option<&Matrix>,
    dims: &ModelDims,
    hyper_cfg: &HyperPriorConfig,
    cfg: &TrainConfig,
    validation: Option<&ValidationSet>,
) -> Result<TrainedModel> {
    dims.validate()?;
    hyper_cfg.validate(dims.d)?;
    if data.n != dims.n || data.m != dims.m || data.k != dims.k {
        return Err(Error::Dimension {
            op: "train",
            detail: format!(
                "data tensor is {}x{}x{}, dims say {}x{}x{}",
                data.n,
                data.m,
                data.k,
                dims.n,
                dims.m,
                dims.k
            ),
        });
    }
    if data.observed_count() == 0 {
        return Err(Error::Invalid { op: "train", detail: "no observed cells".to_string() });
    }
    if cfg.feature_coupling && f.is_none() {
        return Err(Error::Invalid {
            op: "train",
            detail: "feature coupling is on but no feature matrix was given".to_string(),
        });
    }
    if cfg.sweeps == 0 {
        return Err(Error::Invalid { op: "train", detail: "sweeps must be positive".to_string() });
    }
    let burn_in = cfg.effective_burn_in();
    if burn_in >= cfg.sweeps {
        return Err(Error::Invalid {
            op: "train",
            detail: format!("burn_in {burn_in} must be below sweeps {}", cfg.sweeps),
        });
    }
    if let Some(vs) = validation {
        match &vs.features {
            Some(fv) => {
                if !cfg.feature_coupling {
                    return Err(Error::Invalid {
                        op: "train",
                        detail: "feature-based validation requires feature coupling".to_string(),
                    });
                }
                if fv.rows() != dims.d || fv.cols() != vs.delta.n {
                    return Err(Error::Dimension {
                        op: "train",
                        detail: format!(
                            "validation features must be {}x{}, got {}x{}",
                            dims.d,
                            vs.delta.n,
                            fv.rows(),
                            fv.cols()
                        ),
                    });
                }
            }
            None => {
                if vs.delta.n != dims.n {
                    return Err(Error::Dimension {
                        op: "train",
                        detail: "fold-in validation tensor must cover the training rows".to_string(),
                    });
                }
            }
        }
        if vs.delta.m != dims.m || vs.delta.k != dims.k {
            return Err(Error::Dimension {
                op: "train",
                detail: "validation tensor version/parameter dims differ from the model".to_string(),
            });
        }
    }

    let root = RngStream::root(cfg.seed);
    let (mut state, mut hyper) = init_state(dims, f, hyper_cfg, &root.child("init", 0))?;
    if cfg.fix_t_to_ones {
        state.t = Matrix::from_fn(dims.d, dims.k, |_, _| 1.0);
    }

    let mut samples = Vec::with_capacity(cfg.sweeps - burn_in);
    let mut rmse_trace = Vec::new();
    for y in 0..cfg.sweeps {
        gibbs_sweep(&mut state, &mut hyper, data, f, cfg, hyper_cfg, y, &root)?;
        if cfg.track_rmse_every > 0 && (y + 1) % cfg.track_rmse_every == 0 {
            let train_rmse = point_rmse(&state.u_hat, &state.v, &state.t, data)?;
            let validation_rmse = match validation {
                Some(vs) => Some(validation_point_rmse(vs, &state)?),
                None => None,
            };
            rmse_trace.push(RmsePoint { sweep: y + 1, train: train_rmse, validation: validation_rmse });
        }
        if y >= burn_in {
            samples.push(Snapshot {
                p: state.p.clone(),
                q: state.q.clone(),
                v: state.v.clone(),
                t: state.t.clone(),
                u: (!cfg.feature_coupling).then(|| state.u.clone()),
            });
        }
    }
    Ok(TrainedModel {
        dims: *dims,
        samples,
        rmse_trace,
        sweeps: cfg.sweeps,
        burn_in,
        seed: cfg.seed,
    })
}

/// Monte-Carlo prediction for an unseen image: the mean over retained
/// snapshots of ⟨PᵀF_t + Q, V_j, T_k⟩, shifted by the image's original
/// parameters A_t. Returns the raw M x K predictions before any clipping.
pub fn predict(model: &TrainedModel, f_t: &[f64], a_t: &[f64]) -> Result<Matrix> {
    predict_prefix(model, f_t, a_t, model.samples.len())
}

/// `predict` restricted to the first `prefix` snapshots.
pub fn predict_prefix(model: &TrainedModel, f_t: &[f64], a_t: &[f64], prefix: usize) -> Result<Matrix> {
    if model.samples.is_empty() {
        return Err(Error::Invalid { op: "predict", detail: "model holds no snapshots".to_string() });
    }
    if prefix == 0 || prefix > model.samples.len() {
        return Err(Error::Invalid {
            op: "predict",
            detail: format!("prefix {prefix} outside 1..={}", model.samples.len()),
        });
    }
    if f_t.len() != model.dims.d || a_t.len() != model.dims.k {
        return Err(Error::Dimension {
            op: "predict",
            detail: format!(
                "need features of length {} and parameters of length {}, got {} and {}",
                model.dims.d,
                model.dims.k,
                f_t.len(),
                a_t.len()
            ),
        });
    }
    let (m, k) = (model.dims.m, model.dims.k);
    let mut acc = Matrix::zeros(m, k);
    for snap in &model.samples[..prefix] {
        let u = snap.coupled_factor(f_t);
        for j in 0..m {
            let row = acc.row_mut(j);
            for kk in 0..k {
                let mut s = 0.0;
                for dd in 0..u.len() {
                    s += u[dd] * snap.v.get(dd, j) * snap.t.get(dd, kk);
                }
                row[kk] += s;
            }
        }
    }
    let inv = 1.0 / prefix as f64;
    for j in 0..m {
        let row = acc.row_mut(j);
        for kk in 0..k {
            row[kk] = row[kk] * inv + a_t[kk];
        }
    }
    if !acc.is_finite() {
        return Err(Error::NonFiniteResult { op: "predict" });
    }
    Ok(acc)
}

/// One snapshot's delta predictions at the given cells. With `features`,
/// rows go through the coupling; without, rows index the snapshot's own
/// factor columns (fold-in), which only coupling-off models retain.
pub fn snapshot_cell_deltas(
    snap: &Snapshot,
    features: Option<&Matrix>,
    cells: &[CellRef],
) -> Result<Vec<f64>> {
    let d = snap.v.rows();
    let mut row_factor: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        if !row_factor.contains_key(&cell.row) {
            let fac = match features {
                Some(f) => {
                    if cell.row >= f.cols() {
                        return Err(Error::Dimension {
                            op: "snapshot_cell_deltas",
                            detail: format!("row {} outside feature matrix", cell.row),
                        });
                    }
                    let col: Vec<f64> = (0..d).map(|r| f.get(r, cell.row)).collect();
                    snap.coupled_factor(&col)
                }
                None => {
                    let u = snap.u.as_ref().ok_or_else(|| Error::Invalid {
                        op: "snapshot_cell_deltas",
                        detail: "snapshot retains no factor columns; fold-in needs a coupling-off run"
                            .to_string(),
                    })?;
                    if cell.row >= u.cols() {
                        return Err(Error::Dimension {
                            op: "snapshot_cell_deltas",
                            detail: format!("row {} outside factor matrix", cell.row),
                        });
                    }
                    u.col(cell.row)
                }
            };
            row_factor.insert(cell.row, fac);
        }
        let fac = &row_factor[&cell.row];
        if cell.j >= snap.v.cols() || cell.k >= snap.t.cols() {
            return Err(Error::Dimension {
                op: "snapshot_cell_deltas",
                detail: format!("cell ({}, {}, {}) outside model dims", cell.row, cell.j, cell.k),
            });
        }
        let mut s = 0.0;
        for dd in 0..d {
            s += fac[dd] * snap.v.get(dd, cell.j) * snap.t.get(dd, cell.k);
        }
        out.push(s);
    }
    Ok(out)
}

/// Limits predictions to the band [A - zeta*A, A + lambda*A] around the
/// image's original parameters: the upper cap applies first, then the
/// lower cap.
pub fn clip(pred: &Matrix, a_t: &[f64], cfg: &ClipConfig) -> Result<Matrix> {
    cfg.validate()?;
    if pred.cols() != a_t.len() || pred.cols() != cfg.lambda.len() {
        return Err(Error::Dimension {
            op: "clip",
            detail: format!(
                "predictions have {} columns, parameters {}, multipliers {}",
                pred.cols(),
                a_t.len(),
                cfg.lambda.len()
            ),
        });
    }
    let mut out = pred.clone();
    for j in 0..out.rows() {
        let row = out.row_mut(j);
        for (k, v) in row.iter_mut().enumerate() {
            let a = a_t[k];
            *v = v.min(a + cfg.lambda[k] * a);
            *v = v.max(a - cfg.zeta[k] * a);
        }
    }
    Ok(out)
}

// --- Persistence ---------------------------------------------------------

fn snapshot_file(dir: &Path, prefix: &str, index: usize) -> std::path::PathBuf {
    dir.join(format!("{prefix}_{:04}.csv", index + 1))
}

/// Writes the model as a directory: manifest.txt plus per-snapshot CSVs
/// (and the RMSE trace when one was recorded). Coupling-off models also
/// persist their factor columns so fold-in prediction survives a reload.
pub fn save_model(model: &TrainedModel, dir: &Path) -> Result<()> {
    if model.samples.is_empty() {
        return Err(Error::Invalid { op: "save_model", detail: "model holds no snapshots".to_string() });
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let manifest = format!(
        "format_version={}\nN={}\nM={}\nK={}\nD={}\nsweeps={}\nburn_in={}\nseed={}\nsnapshot_count={}\n",
        MODEL_FORMAT_VERSION,
        model.dims.n,
        model.dims.m,
        model.dims.k,
        model.dims.d,
        model.sweeps,
        model.burn_in,
        model.seed,
        model.samples.len()
    );
    atomic_write(&dir.join("manifest.txt"), manifest.as_bytes())?;
    for (idx, snap) in model.samples.iter().enumerate() {
        let q = Matrix::new(1, snap.q.len(), snap.q.clone())?;
        atomic_write(&snapshot_file(dir, "P", idx), snap.p.to_csv_string().as_bytes())?;
        atomic_write(&snapshot_file(dir, "Q", idx), q.to_csv_string().as_bytes())?;
        atomic_write(&snapshot_file(dir, "V", idx), snap.v.to_csv_string().as_bytes())?;
        atomic_write(&snapshot_file(dir, "T", idx), snap.t.to_csv_string().as_bytes())?;
        if let Some(u) = &snap.u {
            atomic_write(&snapshot_file(dir, "U", idx), u.to_csv_string().as_bytes())?;
        }
    }
    if !model.rmse_trace.is_empty() {
        let mut buf = String::new();
        for point in &model.rmse_trace {
            buf.push_str(&point.sweep.to_string());
            buf.push(',');
            buf.push_str(&format_f64(point.train));
            buf.push(',');
            if let Some(v) = point.validation {
                buf.push_str(&format_f64(v));
            }
            buf.push('\n');
        }
        atomic_write(&dir.join("rmse_trace.csv"), buf.as_bytes())?;
    }
    Ok(())
}

fn manifest_value<'a>(map: &'a BTreeMap<String, String>, key: &str, path: &str) -> Result<&'a str> {
    map.get(key).map(String::as_str).ok_or_else(|| {
        Error::ModelFormat(format!("{path}: missing manifest key {key}"))
    })
}

fn parse_manifest_num<T: std::str::FromStr>(raw: &str, key: &str, path: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::ModelFormat(format!("{path}: manifest key {key} has invalid value {raw:?}")))
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let manifest_path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let path_str = manifest_path.display().to_string();
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => {
                return Err(Error::ModelFormat(format!(
                    "{path_str}: manifest line {line:?} is not key=value"
                )))
            }
        }
    }
    let version: u32 = parse_manifest_num(manifest_value(&map, "format_version", &path_str)?, "format_version", &path_str)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "{path_str}: format_version {version} unsupported (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    let dims = ModelDims {
        n: parse_manifest_num(manifest_value(&map, "N", &path_str)?, "N", &path_str)?,
        m: parse_manifest_num(manifest_value(&map, "M", &path_str)?, "M", &path_str)?,
        k: parse_manifest_num(manifest_value(&map, "K", &path_str)?, "K", &path_str)?,
        d: parse_manifest_num(manifest_value(&map, "D", &path_str)?, "D", &path_str)?,
    };
    dims.validate()?;
    let sweeps: usize = parse_manifest_num(manifest_value(&map, "sweeps", &path_str)?, "sweeps", &path_str)?;
    let burn_in: usize = parse_manifest_num(manifest_value(&map, "burn_in", &path_str)?, "burn_in", &path_str)?;
    let seed: u64 = parse_manifest_num(manifest_value(&map, "seed", &path_str)?, "seed", &path_str)?;
    let count: usize =
        parse_manifest_num(manifest_value(&map, "snapshot_count", &path_str)?, "snapshot_count", &path_str)?;
    if count == 0 {
        return Err(Error::ModelFormat(format!("{path_str}: snapshot_count must be positive")));
    }

    let mut samples = Vec::with_capacity(count);
    for idx in 0..count {
        let read = |prefix: &str| -> Result<Matrix> {
            Matrix::read_csv_file(&snapshot_file(dir, prefix, idx))
        };
        let p = read("P")?;
        let q_m = read("Q")?;
        let v = read("V")?;
        let t = read("T")?;
        let u_path = snapshot_file(dir, "U", idx);
        let u = if u_path.exists() { Some(Matrix::read_csv_file(&u_path)?) } else { None };
        let dim_ok = p.rows() == dims.d
            && p.cols() == dims.d
            && q_m.rows() == 1
            && q_m.cols() == dims.d
            && v.rows() == dims.d
            && v.cols() == dims.m
            && t.rows() == dims.d
            && t.cols() == dims.k
            && u.as_ref().map_or(true, |u| u.rows() == dims.d && u.cols() == dims.n);
        if !dim_ok {
            return Err(Error::ModelFormat(format!(
                "{}: snapshot {} shapes disagree with the manifest dims",
                dir.display(),
                idx + 1
            )));
        }
        samples.push(Snapshot { p, q: q_m.row(0).to_vec(), v, t, u });
    }

    let trace_path = dir.join("rmse_trace.csv");
    let mut rmse_trace = Vec::new();
    if trace_path.exists() {
        let text = std::fs::read_to_string(&trace_path)
            .map_err(|e| Error::io(trace_path.display().to_string(), e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::ModelFormat(format!(
                    "{}: trace line {} needs 3 fields",
                    trace_path.display(),
                    lineno + 1
                )));
            }
            let bad = |field: &str| {
                Error::ModelFormat(format!(
                    "{}: trace line {} field {field:?} invalid",
                    trace_path.display(),
                    lineno + 1
                ))
            };
            let sweep: usize = parts[0].trim().parse().map_err(|_| bad(parts[0]))?;
            let train: f64 = parts[1].trim().parse().map_err(|_| bad(parts[1]))?;
            let validation = if parts[2].trim().is_empty() {
                None
            } else {
                Some(parts[2].trim().parse().map_err(|_| bad(parts[2]))?)
            };
            rmse_trace.push(RmsePoint { sweep, train, validation });
        }
    }

    Ok(TrainedModel { dims, samples, rmse_trace, sweeps, burn_in, seed })
}
