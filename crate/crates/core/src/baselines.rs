//! Reference competitors sharing the dataset and RMSE interfaces:
//! BPMF (two-factor matrix factorization of the unfolded tensor), the
//! uncoupled tensor model (coupling-off training on the raw tensor),
//! multivariate linear regression, and weighted k-nearest-neighbor
//! regression.
//!
//! The two factorization baselines are featureless, so unseen items fold
//! in through slot 0 of the raw parameter tensor R (N x (M+1) x K):
//! slot 0 holds an item's own low-quality parameters, slots 1..=M the
//! enhanced versions. Test rows observe only slot 0; predictions are the
//! Monte-Carlo means of the masked version cells.

use crate::error::{Error, Result};
use crate::matrix::{psd_solve_or_pinv, Matrix};
use crate::model::{
    snapshot_cell_deltas, train, CellRef, HyperPriorConfig, ModelDims, TrainConfig, TrainedModel,
    ValidationSet,
};
use crate::tensor::{DeltaTensor, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Bpmf,
    Dbptf,
    Mlr,
    Wknn,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bpmf" => Ok(BaselineKind::Bpmf),
            "dbptf" => Ok(BaselineKind::Dbptf),
            "mlr" => Ok(BaselineKind::Mlr),
            "wknn" => Ok(BaselineKind::Wknn),
            other => Err(Error::Invalid {
                op: "BaselineKind::parse",
                detail: format!("unknown baseline kind {other:?} (expected bpmf|dbptf|mlr|wknn)"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Bpmf => "bpmf",
            BaselineKind::Dbptf => "dbptf",
            BaselineKind::Mlr => "mlr",
            BaselineKind::Wknn => "wknn",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    /// Latent dimension for the factorization kinds.
    pub latent_dim: usize,
    pub sweeps: usize,
    pub burn_in: Option<usize>,
    /// Neighbor count for wknn.
    pub k: usize,
    /// Additive stabilizer in the wknn inverse-distance weights.
    pub distance_epsilon: f64,
    pub seed: u64,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind) -> Self {
        BaselineSpec {
            kind,
            latent_dim: 8,
            sweeps: 50,
            burn_in: None,
            k: 5,
            distance_epsilon: 1e-8,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.k == 0 || self.sweeps == 0 {
            return Err(Error::Invalid {
                op: "BaselineSpec::validate",
                detail: "latent_dim, k, sweeps must be positive".to_string(),
            });
        }
        if !(self.distance_epsilon > 0.0) {
            return Err(Error::Invalid {
                op: "BaselineSpec::validate",
                detail: format!("distance_epsilon {} must be positive", self.distance_epsilon),
            });
        }
        Ok(())
    }
}

/// Raw parameter tensor for the featureless baselines. Rows are ordered
/// train first, then test; every row observes slot 0, train rows also
/// observe slots 1..=M.
#[derive(Debug, Clone)]
pub struct FoldInTensor {
    pub delta: DeltaTensor,
    pub n_train: usize,
    pub n_test: usize,
}

impl FoldInTensor {
    /// Assembles the fold-in tensor from base parameters A (K x N) and the
    /// enhanced versions (items x M x K), for the given index split.
    pub fn assemble(
        a: &Matrix,
        versions: &Tensor3,
        train_idx: &[usize],
        test_idx: &[usize],
    ) -> Result<FoldInTensor> {
        let (k, n) = (a.rows(), a.cols());
        if versions.n != n || versions.k != k {
            return Err(Error::Dimension {
                op: "FoldInTensor::assemble",
                detail: format!(
                    "params are {k}x{n} but versions tensor is {}x{}x{}",
                    versions.n, versions.m, versions.k
                ),
            });
        }
        if let Some(&bad) = train_idx.iter().chain(test_idx).find(|i| **i >= n) {
            return Err(Error::Invalid {
                op: "FoldInTensor::assemble",
                detail: format!("index {bad} outside 0..{n}"),
            });
        }
        let m = versions.m;
        let rows = train_idx.len() + test_idx.len();
        let mut values = vec![0.0; rows * (m + 1) * k];
        let mut mask = vec![0u8; values.len()];
        for (row, (&item, is_train)) in train_idx
            .iter()
            .map(|i| (i, true))
            .chain(test_idx.iter().map(|i| (i, false)))
            .enumerate()
        {
            for kk in 0..k {
                let pos = (row * (m + 1)) * k + kk;
                values[pos] = a.get(kk, item);
                mask[pos] = 1;
            }
            for mm in 0..m {
                for kk in 0..k {
                    let pos = (row * (m + 1) + mm + 1) * k + kk;
                    values[pos] = versions.get(item, mm, kk);
                    mask[pos] = u8::from(is_train);
                }
            }
        }
        Ok(FoldInTensor {
            delta: DeltaTensor::new(rows, m + 1, k, values, mask)?,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
        })
    }

    /// Enhanced-version count (excludes slot 0).
    pub fn versions(&self) -> usize {
        self.delta.m - 1
    }

    pub fn params(&self) -> usize {
        self.delta.k
    }
}

/// A factorization baseline's trained chain plus its Monte-Carlo mean
/// predictions: one M x K matrix per test row, covering slots 1..=M.
#[derive(Debug)]
pub struct BaselineRun {
    pub model: TrainedModel,
    pub predictions: Vec<Matrix>,
}

/// The masked version cells of one fold-in row, in the coordinates of the
/// tensor the model was trained on (`unfolded` = BPMF column layout).
/// `pos` counts from the first non-training row.
pub fn fold_in_row_cells(data: &FoldInTensor, pos: usize, unfolded: bool) -> Vec<CellRef> {
    let (m, k) = (data.versions(), data.params());
    let row = data.n_train + pos;
    let mut cells = Vec::with_capacity(m * k);
    for mm in 0..m {
        for kk in 0..k {
            cells.push(if unfolded {
                CellRef { row, j: (mm + 1) * k + kk, k: 0 }
            } else {
                CellRef { row, j: mm + 1, k: kk }
            });
        }
    }
    cells
}

/// Monte-Carlo mean predictions over the first `prefix` snapshots for the
/// masked version cells of every fold-in row, as M x K matrices.
pub fn fold_in_predictions(
    model: &TrainedModel,
    data: &FoldInTensor,
    unfolded: bool,
    prefix: usize,
) -> Result<Vec<Matrix>> {
    if prefix == 0 || prefix > model.samples.len() {
        return Err(Error::Invalid {
            op: "fold_in_predictions",
            detail: format!("prefix {prefix} outside 1..={}", model.samples.len()),
        });
    }
    let (m, k) = (data.versions(), data.params());
    let mut out = Vec::with_capacity(data.n_test);
    for pos in 0..data.n_test {
        let cells = fold_in_row_cells(data, pos, unfolded);
        let mut acc = vec![0.0; cells.len()];
        for snap in &model.samples[..prefix] {
            let deltas = snapshot_cell_deltas(snap, None, &cells)?;
            for (a, d) in acc.iter_mut().zip(&deltas) {
                *a += d;
            }
        }
        let inv = 1.0 / prefix as f64;
        for a in &mut acc {
            *a *= inv;
        }
        out.push(Matrix::new(m, k, acc)?);
    }
    Ok(out)
}

/// In-memory reinterpretation of the fold-in tensor as its N x ((M+1)K) x 1
/// unfolding; the row-major layouts coincide, so values and mask carry over.
fn unfold_delta(d: &DeltaTensor) -> Result<DeltaTensor> {
    DeltaTensor::new(d.n, d.m * d.k, 1, d.values().to_vec(), d.mask().to_vec())
}

/// Trains a featureless factorization baseline on a fold-in tensor. The
/// optional validation tensor is given in raw fold-in coordinates
/// (rows x (M+1) x K) and is scored through the fold-in rows' own sampled
/// factors; it is re-unfolded automatically for the BPMF layout.
pub fn fold_in_model(
    data: &FoldInTensor,
    spec: &BaselineSpec,
    unfolded: bool,
    validation: Option<&DeltaTensor>,
    track_rmse_every: usize,
) -> Result<TrainedModel> {
    spec.validate()?;
    let rows = data.n_train + data.n_test;
    let dims = if unfolded {
        ModelDims { n: rows, m: (data.versions() + 1) * data.params(), k: 1, d: spec.latent_dim }
    } else {
        ModelDims { n: rows, m: data.versions() + 1, k: data.params(), d: spec.latent_dim }
    };
    let tensor = if unfolded { unfold_delta(&data.delta)? } else { data.delta.clone() };
    let vs = match validation {
        Some(v) => Some(ValidationSet {
            delta: if unfolded { unfold_delta(v)? } else { v.clone() },
            features: None,
        }),
        None => None,
    };
    let cfg = TrainConfig {
        sweeps: spec.sweeps,
        burn_in: spec.burn_in,
        seed: spec.seed,
        feature_coupling: false,
        fix_t_to_ones: unfolded,
        track_rmse_every,
        ..TrainConfig::default()
    };
    let hyper_cfg = HyperPriorConfig::default_for(dims.d);
    train(&tensor, None, &dims, &hyper_cfg, &cfg, vs.as_ref())
}

fn factorization_run(data: &FoldInTensor, spec: &BaselineSpec, unfolded: bool) -> Result<BaselineRun> {
    let model = fold_in_model(data, spec, unfolded, None, 0)?;
    let predictions = fold_in_predictions(&model, data, unfolded, model.samples.len())?;
    Ok(BaselineRun { model, predictions })
}

/// BPMF: two-factor Gaussian-Wishart Gibbs on the N x ((M+1)K) unfolding
/// (the tensor machinery with the parameter factors pinned to ones and the
/// last mode collapsed). Test rows fold in through slot 0.
pub fn bpmf_train_predict(data: &FoldInTensor, spec: &BaselineSpec) -> Result<BaselineRun> {
    factorization_run(data, spec, true)
}

/// The uncoupled tensor baseline: coupling-off training on the raw
/// (M+1)-version tensor. Test rows fold in through slot 0.
pub fn dbptf_train_predict(data: &FoldInTensor, spec: &BaselineSpec) -> Result<BaselineRun> {
    factorization_run(data, spec, false)
}

/// Ordinary least squares with an explicit intercept, solved through the
/// normal equations with a rank-revealing pseudo-inverse fallback.
#[derive(Debug, Clone)]
pub struct MlrModel {
    /// in_dim x out_dim coefficient block.
    pub coef: Matrix,
    pub intercept: Vec<f64>,
}

/// Fits Y ~ coef^T x + intercept. `x` is in_dim x N (one column per
/// sample), `y` is out_dim x N.
pub fn mlr_fit(x: &Matrix, y: &Matrix) -> Result<MlrModel> {
    if x.cols() != y.cols() || x.cols() == 0 {
        return Err(Error::Dimension {
            op: "mlr_fit",
            detail: format!("{} input columns vs {} target columns", x.cols(), y.cols()),
        });
    }
    let (p, n) = (x.rows(), x.cols());
    // Augmented Gram matrix over [x; 1].
    let mut g = Matrix::zeros(p + 1, p + 1);
    let mut b = Matrix::zeros(p + 1, y.rows());
    for s in 0..n {
        for r in 0..p {
            let xr = x.get(r, s);
            for c in r..p {
                let v = g.get(r, c) + xr * x.get(c, s);
                g.set(r, c, v);
            }
            let v = g.get(r, p) + xr;
            g.set(r, p, v);
            for o in 0..y.rows() {
                let v = b.get(r, o) + xr * y.get(o, s);
                b.set(r, o, v);
            }
        }
        for o in 0..y.rows() {
            let v = b.get(p, o) + y.get(o, s);
            b.set(p, o, v);
        }
    }
    g.set(p, p, n as f64);
    for r in 0..p + 1 {
        for c in 0..r {
            g.set(r, c, g.get(c, r));
        }
    }
    let sol = psd_solve_or_pinv(&g, &b)?;
    let coef = Matrix::from_fn(p, y.rows(), |r, c| sol.get(r, c));
    let intercept = (0..y.rows()).map(|c| sol.get(p, c)).collect();
    Ok(MlrModel { coef, intercept })
}

pub fn mlr_predict(model: &MlrModel, query: &[f64]) -> Result<Vec<f64>> {
    if query.len() != model.coef.rows() {
        return Err(Error::Dimension {
            op: "mlr_predict",
            detail: format!("query length {} vs {} inputs", query.len(), model.coef.rows()),
        });
    }
    let mut out = model.intercept.clone();
    for (r, &q) in query.iter().enumerate() {
        if q == 0.0 {
            continue;
        }
        let row = model.coef.row(r);
        for (o, c) in out.iter_mut().zip(row) {
            *o += q * c;
        }
    }
    Ok(out)
}

/// Inverse-distance-weighted mean of the k nearest training targets.
/// `train_inputs` is in_dim x N, `train_targets` out_dim x N.
pub fn wknn_predict(
    query: &[f64],
    train_inputs: &Matrix,
    train_targets: &Matrix,
    spec: &BaselineSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = train_inputs.cols();
    if n == 0 {
        return Err(Error::Invalid { op: "wknn_predict", detail: "empty training set".to_string() });
    }
    if spec.k > n {
        return Err(Error::Invalid {
            op: "wknn_predict",
            detail: format!("k {} exceeds training size {n}", spec.k),
        });
    }
    if query.len() != train_inputs.rows() || train_targets.cols() != n {
        return Err(Error::Dimension {
            op: "wknn_predict",
            detail: format!(
                "query length {} vs {} input rows; {} target columns vs {n}",
                query.len(),
                train_inputs.rows(),
                train_targets.cols()
            ),
        });
    }
    let mut dist: Vec<(f64, usize)> = (0..n)
        .map(|s| {
            let mut sq = 0.0;
            for (r, &q) in query.iter().enumerate() {
                let d = train_inputs.get(r, s) - q;
                sq += d * d;
            }
            (sq.sqrt(), s)
        })
        .collect();
    // Index tiebreak keeps equal-distance orderings deterministic.
    dist.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let mut out = vec![0.0; train_targets.rows()];
    let mut total = 0.0;
    for &(d, s) in &dist[..spec.k] {
        let w = 1.0 / (d + spec.distance_epsilon);
        total += w;
        for (o, r) in out.iter_mut().zip(0..train_targets.rows()) {
            *o += w * train_targets.get(r, s);
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Reinterprets a stacked (version-major) prediction vector as M x K.
pub fn stacked_to_matrix(values: &[f64], m: usize, k: usize) -> Result<Matrix> {
    Matrix::new(m, k, values.to_vec())
}
