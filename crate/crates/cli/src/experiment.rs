//! Cross-validated experiment orchestration: split the dataset, train the
//! selected model per fold, pick the snapshot prefix on validation error,
//! score the test rows, and write the report artifacts.
//!
//! Validation rows are part of every model's training budget: the
//! snapshot-averaging models hold them out to choose the prefix (and to
//! trace held-out error per sweep), while the closed-form models, which
//! have nothing to select, train on them directly. Test rows are touched
//! by nothing but the final scoring pass.

use crate::dataset::{load_dataset, ParameterDataset};
use fbptf_core::baselines::{
    fold_in_model, fold_in_predictions, fold_in_row_cells, mlr_fit, mlr_predict, wknn_predict,
    BaselineKind, BaselineSpec, FoldInTensor,
};
use fbptf_core::l21::L21Config;
use fbptf_core::matrix::{atomic_write, format_f64, Matrix};
use fbptf_core::metrics::rmse;
use fbptf_core::model::{
    predict_prefix, snapshot_cell_deltas, train, CellRef, HyperPriorConfig, ModelDims, RmsePoint,
    TrainConfig, TrainedModel, ValidationSet,
};
use fbptf_core::rng::RngStream;
use fbptf_core::synthetic::split_folds;
use fbptf_core::tensor::DeltaTensor;
use fbptf_core::{Error, Result};
use rand::Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Fbptf,
    Baseline(BaselineKind),
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "fbptf" {
            return Ok(ModelKind::Fbptf);
        }
        BaselineKind::parse(s).map(ModelKind::Baseline).map_err(|_| Error::Invalid {
            op: "ModelKind::parse",
            detail: format!("unknown model kind {s:?} (expected fbptf|bpmf|dbptf|mlr|wknn)"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Fbptf => "fbptf",
            ModelKind::Baseline(b) => b.name(),
        }
    }

    /// Kinds whose predictions average Gibbs snapshots (and can therefore
    /// use a validation set for prefix selection).
    fn samples_snapshots(&self) -> bool {
        !matches!(self, ModelKind::Baseline(BaselineKind::Mlr | BaselineKind::Wknn))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSpec {
    /// K-fold cross-validation; every image lands in exactly one test fold.
    Folds(usize),
    /// A single shuffled split with fixed counts.
    Counts { train: usize, val: usize, test: usize },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub kind: ModelKind,
    pub split: SplitSpec,
    pub seed: u64,
    pub sweeps: usize,
    pub burn_in: Option<usize>,
    /// Trace train/validation RMSE every this many sweeps; 0 disables.
    pub track_rmse_every: usize,
    /// Share of each fold's non-test rows carved out as validation for the
    /// snapshot-averaging kinds; 0 disables the carve.
    pub val_fraction: f64,
    /// Choose the Monte-Carlo prefix by validation RMSE instead of using
    /// every retained snapshot.
    pub select_prefix: bool,
    /// Overrides for the latent initialization scale and initial noise
    /// precision; None keeps the model defaults.
    pub sigma2_init: Option<f64>,
    pub alpha_init: Option<f64>,
    pub l21: L21Config,
    /// Latent dimension for the featureless factorization baselines (the
    /// coupled model always uses the feature length).
    pub latent_dim: usize,
    pub k_neighbors: usize,
    pub distance_epsilon: f64,
}

impl ExperimentConfig {
    pub fn new(dataset_dir: PathBuf, out_dir: PathBuf, kind: ModelKind) -> Self {
        ExperimentConfig {
            dataset_dir,
            out_dir,
            kind,
            split: SplitSpec::Folds(3),
            seed: 42,
            sweeps: 30,
            burn_in: None,
            track_rmse_every: 1,
            val_fraction: 0.15,
            select_prefix: true,
            sigma2_init: None,
            alpha_init: None,
            l21: L21Config::default(),
            latent_dim: 8,
            k_neighbors: 5,
            distance_epsilon: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::Invalid {
                op: "ExperimentConfig::validate",
                detail: "sweeps must be positive".to_string(),
            });
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Invalid {
                op: "ExperimentConfig::validate",
                detail: format!("val_fraction {} outside [0, 1)", self.val_fraction),
            });
        }
        if self.latent_dim == 0 || self.k_neighbors == 0 {
            return Err(Error::Invalid {
                op: "ExperimentConfig::validate",
                detail: "latent_dim and k_neighbors must be positive".to_string(),
            });
        }
        if let SplitSpec::Counts { train, test, .. } = self.split {
            if train == 0 || test == 0 {
                return Err(Error::Invalid {
                    op: "ExperimentConfig::validate",
                    detail: "split counts need at least one train and one test image".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Recognized configuration-file keys (dotted grammar).
pub const CONFIG_KEYS: &[&str] = &[
    "train.sweeps",
    "train.burn_in",
    "train.seed",
    "train.track_rmse_every",
    "train.val_fraction",
    "train.select_prefix",
    "hyper.sigma2_init",
    "hyper.alpha_init",
    "l21.beta",
    "l21.delta",
    "l21.epsilon",
    "l21.max_iter",
    "l21.tol",
    "split.folds",
    "split.train",
    "split.val",
    "split.test",
    "baseline.latent_dim",
    "baseline.k",
    "baseline.distance_epsilon",
];

/// Applies a parsed configuration map (file plus overrides) onto the
/// defaults. Split keys are exclusive: folds or counts, not both.
pub fn apply_config_map(cfg: &mut ExperimentConfig, map: &crate::config::ConfigMap) -> Result<()> {
    map.reject_unknown_keys(CONFIG_KEYS)?;
    if let Some(v) = map.get_usize("train.sweeps")? {
        cfg.sweeps = v;
    }
    if let Some(v) = map.get_usize("train.burn_in")? {
        cfg.burn_in = Some(v);
    }
    if let Some(v) = map.get_u64("train.seed")? {
        cfg.seed = v;
    }
    if let Some(v) = map.get_usize("train.track_rmse_every")? {
        cfg.track_rmse_every = v;
    }
    if let Some(v) = map.get_f64("train.val_fraction")? {
        cfg.val_fraction = v;
    }
    if let Some(v) = map.get_bool("train.select_prefix")? {
        cfg.select_prefix = v;
    }
    if let Some(v) = map.get_f64("hyper.sigma2_init")? {
        cfg.sigma2_init = Some(v);
    }
    if let Some(v) = map.get_f64("hyper.alpha_init")? {
        cfg.alpha_init = Some(v);
    }
    if let Some(v) = map.get_f64("l21.beta")? {
        cfg.l21.beta = v;
    }
    if let Some(v) = map.get_f64("l21.delta")? {
        cfg.l21.delta = v;
    }
    if let Some(v) = map.get_f64("l21.epsilon")? {
        cfg.l21.epsilon = v;
    }
    if let Some(v) = map.get_usize("l21.max_iter")? {
        cfg.l21.max_iter = v;
    }
    if let Some(v) = map.get_f64("l21.tol")? {
        cfg.l21.tol = v;
    }
    if let Some(v) = map.get_usize("baseline.latent_dim")? {
        cfg.latent_dim = v;
    }
    if let Some(v) = map.get_usize("baseline.k")? {
        cfg.k_neighbors = v;
    }
    if let Some(v) = map.get_f64("baseline.distance_epsilon")? {
        cfg.distance_epsilon = v;
    }
    let folds = map.get_usize("split.folds")?;
    let counts = (
        map.get_usize("split.train")?,
        map.get_usize("split.val")?,
        map.get_usize("split.test")?,
    );
    match (folds, counts) {
        (Some(_), (Some(_), _, _) | (_, Some(_), _) | (_, _, Some(_))) => {
            return Err(Error::Invalid {
                op: "config",
                detail: "split.folds conflicts with split.train/val/test".to_string(),
            })
        }
        (Some(f), _) => cfg.split = SplitSpec::Folds(f),
        (None, (Some(train), val, Some(test))) => {
            cfg.split = SplitSpec::Counts { train, val: val.unwrap_or(0), test };
        }
        (None, (None, None, None)) => {}
        (None, _) => {
            return Err(Error::Invalid {
                op: "config",
                detail: "count splits need both split.train and split.test".to_string(),
            })
        }
    }
    Ok(())
}

/// One fold's index sets.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn fisher_yates(items: &mut [usize], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Carves validation rows out of a fold's pool for the snapshot-averaging
/// kinds; closed-form kinds keep the whole pool as training data.
fn carve_validation(cfg: &ExperimentConfig, fold: usize, pool: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    if !cfg.kind.samples_snapshots() || cfg.val_fraction == 0.0 {
        return (pool, Vec::new());
    }
    let n_val = ((pool.len() as f64 * cfg.val_fraction).round() as usize)
        .max(1)
        .min(pool.len().saturating_sub(1));
    let mut order = pool;
    let mut rng = RngStream::root(cfg.seed).child("val_carve", fold as u64).rng();
    fisher_yates(&mut order, &mut rng);
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    (train, val)
}

fn build_splits(cfg: &ExperimentConfig, n: usize) -> Result<Vec<FoldSplit>> {
    match cfg.split {
        SplitSpec::Folds(folds) => {
            let parts = split_folds(n, folds, cfg.seed)?;
            Ok(parts
                .into_iter()
                .enumerate()
                .map(|(f, (pool, test))| {
                    let (train, val) = carve_validation(cfg, f, pool);
                    FoldSplit { train, val, test }
                })
                .collect())
        }
        SplitSpec::Counts { train, val, test } => {
            if train + val + test > n {
                return Err(Error::Invalid {
                    op: "build_splits",
                    detail: format!(
                        "split counts {train}+{val}+{test} exceed the dataset's {n} images"
                    ),
                });
            }
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = RngStream::root(cfg.seed).child("counts_split", 0).rng();
            fisher_yates(&mut order, &mut rng);
            let (tr, rest) = order.split_at(train);
            let (va, rest) = rest.split_at(val);
            let te = &rest[..test];
            let mut split =
                FoldSplit { train: tr.to_vec(), val: va.to_vec(), test: te.to_vec() };
            if !cfg.kind.samples_snapshots() {
                split.train.extend(split.val.drain(..));
            }
            Ok(vec![split])
        }
    }
}

/// No image may appear in more than one of train/validation/test.
fn assert_split_hygiene(splits: &[FoldSplit], n: usize) -> Result<()> {
    for (f, s) in splits.iter().enumerate() {
        let mut seen = vec![false; n];
        for &i in s.train.iter().chain(&s.val).chain(&s.test) {
            if i >= n {
                return Err(Error::Invalid {
                    op: "split hygiene",
                    detail: format!("fold {f} references image {i} outside 0..{n}"),
                });
            }
            if seen[i] {
                return Err(Error::Invalid {
                    op: "split hygiene",
                    detail: format!(
                        "image {i} appears in more than one of train/validation/test in fold {f}"
                    ),
                });
            }
            seen[i] = true;
        }
        if s.train.is_empty() || s.test.is_empty() {
            return Err(Error::Invalid {
                op: "split hygiene",
                detail: format!("fold {f} has an empty train or test set"),
            });
        }
    }
    Ok(())
}

/// One fold's outputs: pooled test RMSE, the snapshot prefix used (0 when
/// the model kind has none), the per-sweep RMSE trace, and absolute M x K
/// parameter predictions per test image.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub test_rmse: f64,
    pub selected_prefix: usize,
    pub snapshots: usize,
    pub trace: Vec<RmsePoint>,
    pub predictions: Vec<(usize, Matrix)>,
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    RngStream::root(seed).child("fold", fold as u64).rng().random()
}

/// Minimizes cumulative-mean validation RMSE over snapshot prefixes; ties
/// go to the shortest prefix.
fn select_snapshot_prefix(
    model: &TrainedModel,
    features: Option<&Matrix>,
    cells: &[CellRef],
    actual: &[f64],
) -> Result<usize> {
    if cells.is_empty() || cells.len() != actual.len() {
        return Err(Error::Invalid {
            op: "select_snapshot_prefix",
            detail: format!("{} cells vs {} actual values", cells.len(), actual.len()),
        });
    }
    let mut acc = vec![0.0; cells.len()];
    let mut best_rmse = f64::INFINITY;
    let mut best_prefix = model.samples.len();
    for (s, snap) in model.samples.iter().enumerate() {
        let deltas = snapshot_cell_deltas(snap, features, cells)?;
        for (a, d) in acc.iter_mut().zip(&deltas) {
            *a += d;
        }
        let inv = 1.0 / (s + 1) as f64;
        let mut sq = 0.0;
        for (a, t) in acc.iter().zip(actual) {
            let diff = a * inv - t;
            sq += diff * diff;
        }
        let r = (sq / cells.len() as f64).sqrt();
        if r < best_rmse {
            best_rmse = r;
            best_prefix = s + 1;
        }
    }
    Ok(best_prefix)
}

fn run_fbptf_fold(
    ds: &ParameterDataset,
    cfg: &ExperimentConfig,
    fold: usize,
    split: &FoldSplit,
) -> Result<FoldOutcome> {
    let dims = ModelDims { n: split.train.len(), m: ds.m(), k: ds.k(), d: ds.k() + ds.l() };
    let delta = ds.delta_rows(&split.train)?;
    let f_train = ds.inputs_for(&split.train)?;
    let f_val = if split.val.is_empty() { None } else { Some(ds.inputs_for(&split.val)?) };
    let validation = match &f_val {
        Some(fv) => Some(ValidationSet { delta: ds.delta_rows(&split.val)?, features: Some(fv.clone()) }),
        None => None,
    };
    let mut hyper = HyperPriorConfig::default_for(dims.d);
    if let Some(s) = cfg.sigma2_init {
        hyper.sigma2_init = s;
    }
    if let Some(a) = cfg.alpha_init {
        hyper.alpha_init = a;
    }
    let tc = TrainConfig {
        sweeps: cfg.sweeps,
        burn_in: cfg.burn_in,
        l21: cfg.l21.clone(),
        seed: fold_seed(cfg.seed, fold),
        feature_coupling: true,
        track_rmse_every: cfg.track_rmse_every,
        fix_t_to_ones: false,
    };
    let model = train(&delta, Some(&f_train), &dims, &hyper, &tc, validation.as_ref())?;

    let prefix = match (&validation, cfg.select_prefix) {
        (Some(vs), true) => {
            let (m, k) = (ds.m(), ds.k());
            let mut cells = Vec::with_capacity(split.val.len() * m * k);
            for row in 0..split.val.len() {
                for j in 0..m {
                    for kk in 0..k {
                        cells.push(CellRef { row, j, k: kk });
                    }
                }
            }
            select_snapshot_prefix(&model, f_val.as_ref(), &cells, vs.delta.values())?
        }
        _ => model.samples.len(),
    };

    let mut predictions = Vec::with_capacity(split.test.len());
    for &item in &split.test {
        let f_t = ds.inputs_for(&[item])?.col(0);
        let a_t = ds.a.col(item);
        predictions.push((item, predict_prefix(&model, &f_t, &a_t, prefix)?));
    }
    Ok(FoldOutcome {
        test_rmse: fold_rmse(ds, &predictions)?,
        selected_prefix: prefix,
        snapshots: model.samples.len(),
        trace: model.rmse_trace,
        predictions,
    })
}

/// Same-shape companion to the fold-in tensor that observes only the
/// validation rows' version cells (raw values), for held-out tracing and
/// prefix selection.
fn fold_in_validation(ds: &ParameterDataset, split: &FoldSplit) -> Result<DeltaTensor> {
    let (m, k) = (ds.m(), ds.k());
    let rows = split.train.len() + split.val.len() + split.test.len();
    let mut values = vec![0.0; rows * (m + 1) * k];
    let mut mask = vec![0u8; values.len()];
    for (pos, &item) in split.val.iter().enumerate() {
        let row = split.train.len() + pos;
        for mm in 0..m {
            for kk in 0..k {
                let at = (row * (m + 1) + mm + 1) * k + kk;
                values[at] = ds.versions.get(item, mm, kk);
                mask[at] = 1;
            }
        }
    }
    DeltaTensor::new(rows, m + 1, k, values, mask)
}

fn run_factorization_fold(
    ds: &ParameterDataset,
    cfg: &ExperimentConfig,
    kind: BaselineKind,
    fold: usize,
    split: &FoldSplit,
) -> Result<FoldOutcome> {
    let unfolded = kind == BaselineKind::Bpmf;
    let holdout: Vec<usize> = split.val.iter().chain(&split.test).copied().collect();
    let data = FoldInTensor::assemble(&ds.a, &ds.versions, &split.train, &holdout)?;
    let validation = if split.val.is_empty() { None } else { Some(fold_in_validation(ds, split)?) };
    let spec = BaselineSpec {
        kind,
        latent_dim: cfg.latent_dim,
        sweeps: cfg.sweeps,
        burn_in: cfg.burn_in,
        k: cfg.k_neighbors,
        distance_epsilon: cfg.distance_epsilon,
        seed: fold_seed(cfg.seed, fold),
    };
    let model =
        fold_in_model(&data, &spec, unfolded, validation.as_ref(), cfg.track_rmse_every)?;

    let prefix = if cfg.select_prefix && !split.val.is_empty() {
        let (m, k) = (ds.m(), ds.k());
        let mut cells = Vec::with_capacity(split.val.len() * m * k);
        let mut actual = Vec::with_capacity(split.val.len() * m * k);
        for (pos, &item) in split.val.iter().enumerate() {
            cells.extend(fold_in_row_cells(&data, pos, unfolded));
            for mm in 0..m {
                for kk in 0..k {
                    actual.push(ds.versions.get(item, mm, kk));
                }
            }
        }
        select_snapshot_prefix(&model, None, &cells, &actual)?
    } else {
        model.samples.len()
    };

    let all = fold_in_predictions(&model, &data, unfolded, prefix)?;
    let predictions: Vec<(usize, Matrix)> = split
        .test
        .iter()
        .zip(all.into_iter().skip(split.val.len()))
        .map(|(&item, pred)| (item, pred))
        .collect();
    Ok(FoldOutcome {
        test_rmse: fold_rmse(ds, &predictions)?,
        selected_prefix: prefix,
        snapshots: model.samples.len(),
        trace: model.rmse_trace,
        predictions,
    })
}

/// Stacked regression views shared by MLR and WKNN: inputs are the base
/// parameters over the features ((K+L) x rows), targets the version-major
/// parameter deltas ((M*K) x rows).
fn regression_views(ds: &ParameterDataset, rows: &[usize]) -> Result<(Matrix, Matrix)> {
    let (m, k) = (ds.m(), ds.k());
    let a = ds.a_for(rows)?;
    let x = ds.inputs_for(rows)?;
    let y = Matrix::from_fn(m * k, rows.len(), |r, c| {
        let (mm, kk) = (r / k, r % k);
        ds.versions.get(rows[c], mm, kk) - a.get(kk, c)
    });
    Ok((x, y))
}

fn run_regression_fold(
    ds: &ParameterDataset,
    cfg: &ExperimentConfig,
    kind: BaselineKind,
    split: &FoldSplit,
) -> Result<FoldOutcome> {
    let pool: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
    let (x, y) = regression_views(ds, &pool)?;
    let (m, k) = (ds.m(), ds.k());
    let mlr = if kind == BaselineKind::Mlr { Some(mlr_fit(&x, &y)?) } else { None };
    let spec = BaselineSpec {
        k: cfg.k_neighbors,
        distance_epsilon: cfg.distance_epsilon,
        ..BaselineSpec::new(kind)
    };
    let mut predictions = Vec::with_capacity(split.test.len());
    for &item in &split.test {
        let a_t = ds.a.col(item);
        let mut query = a_t.clone();
        query.extend(ds.features.col(item));
        let deltas = match &mlr {
            Some(model) => mlr_predict(model, &query)?,
            None => wknn_predict(&query, &x, &y, &spec)?,
        };
        let pred = Matrix::from_fn(m, k, |mm, kk| deltas[mm * k + kk] + a_t[kk]);
        predictions.push((item, pred));
    }
    Ok(FoldOutcome {
        test_rmse: fold_rmse(ds, &predictions)?,
        selected_prefix: 0,
        snapshots: 0,
        trace: Vec::new(),
        predictions,
    })
}

fn run_fold(
    ds: &ParameterDataset,
    cfg: &ExperimentConfig,
    fold: usize,
    split: &FoldSplit,
) -> Result<FoldOutcome> {
    match cfg.kind {
        ModelKind::Fbptf => run_fbptf_fold(ds, cfg, fold, split),
        ModelKind::Baseline(kind @ (BaselineKind::Bpmf | BaselineKind::Dbptf)) => {
            run_factorization_fold(ds, cfg, kind, fold, split)
        }
        ModelKind::Baseline(kind) => run_regression_fold(ds, cfg, kind, split),
    }
}

/// Pooled RMSE of absolute predictions against the true version parameters.
fn fold_rmse(ds: &ParameterDataset, predictions: &[(usize, Matrix)]) -> Result<f64> {
    let (m, k) = (ds.m(), ds.k());
    let mut pred = Vec::with_capacity(predictions.len() * m * k);
    let mut truth = Vec::with_capacity(pred.capacity());
    for (item, p) in predictions {
        for mm in 0..m {
            for kk in 0..k {
                pred.push(p.get(mm, kk));
                truth.push(ds.versions.get(*item, mm, kk));
            }
        }
    }
    let mask = vec![1u8; pred.len()];
    rmse(&pred, &truth, &mask)
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
    pub wall_time_seconds: f64,
    pub outcomes: Vec<FoldOutcome>,
    pub out_dir: PathBuf,
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn json_f64_array(values: &[f64]) -> String {
    let inner: Vec<String> = values.iter().map(|v| format_f64(*v)).collect();
    format!("[{}]", inner.join(", "))
}

fn json_usize_array(values: &[usize]) -> String {
    let inner: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("[{}]", inner.join(", "))
}

/// Serializes the report with a fixed key order; every float uses the
/// 17-significant-digit form, and the wall time sits alone on the last
/// value line so reruns can be compared net of timing.
fn render_report(
    cfg: &ExperimentConfig,
    ds: &ParameterDataset,
    report: &ExperimentReport,
) -> String {
    let split = match cfg.split {
        SplitSpec::Folds(f) => format!("\"folds={f}\""),
        SplitSpec::Counts { train, val, test } => format!("\"counts={train}/{val}/{test}\""),
    };
    let burn_in = cfg.burn_in.map(|b| b.to_string()).unwrap_or_else(|| "null".to_string());
    let sigma2 = cfg.sigma2_init.map(format_f64).unwrap_or_else(|| "null".to_string());
    let alpha = cfg.alpha_init.map(format_f64).unwrap_or_else(|| "null".to_string());
    let prefixes: Vec<usize> = report.outcomes.iter().map(|o| o.selected_prefix).collect();
    let snapshots: Vec<usize> = report.outcomes.iter().map(|o| o.snapshots).collect();
    format!(
        "{{\n  \"model\": {model},\n  \"dataset\": {dataset},\n  \"images\": {images},\n  \"versions\": {versions},\n  \"params\": {params},\n  \"feature_len\": {feature_len},\n  \"split\": {split},\n  \"seed\": {seed},\n  \"sweeps\": {sweeps},\n  \"burn_in\": {burn_in},\n  \"track_rmse_every\": {track},\n  \"val_fraction\": {vf},\n  \"select_prefix\": {sp},\n  \"sigma2_init\": {sigma2},\n  \"alpha_init\": {alpha},\n  \"l21_beta\": {beta},\n  \"l21_delta\": {delta},\n  \"l21_epsilon\": {eps},\n  \"l21_max_iter\": {mi},\n  \"l21_tol\": {tol},\n  \"latent_dim\": {ld},\n  \"k_neighbors\": {kn},\n  \"distance_epsilon\": {de},\n  \"selected_prefix\": {prefixes},\n  \"snapshots\": {snapshots},\n  \"fold_rmse\": {fold_rmse},\n  \"mean_rmse\": {mean_rmse},\n  \"wall_time_seconds\": {wall}\n}}\n",
        model = json_string(cfg.kind.name()),
        dataset = json_string(&cfg.dataset_dir.display().to_string()),
        images = ds.n(),
        versions = ds.m(),
        params = ds.k(),
        feature_len = ds.l(),
        split = split,
        seed = cfg.seed,
        sweeps = cfg.sweeps,
        burn_in = burn_in,
        track = cfg.track_rmse_every,
        vf = format_f64(cfg.val_fraction),
        sp = cfg.select_prefix,
        sigma2 = sigma2,
        alpha = alpha,
        beta = format_f64(cfg.l21.beta),
        delta = format_f64(cfg.l21.delta),
        eps = format_f64(cfg.l21.epsilon),
        mi = cfg.l21.max_iter,
        tol = format_f64(cfg.l21.tol),
        ld = cfg.latent_dim,
        kn = cfg.k_neighbors,
        de = format_f64(cfg.distance_epsilon),
        prefixes = json_usize_array(&prefixes),
        snapshots = json_usize_array(&snapshots),
        fold_rmse = json_f64_array(&report.fold_rmse),
        mean_rmse = format_f64(report.mean_rmse),
        wall = format!("{:.3}", report.wall_time_seconds),
    )
}

fn render_predictions_csv(ds: &ParameterDataset, outcomes: &[FoldOutcome]) -> String {
    let (m, k) = (ds.m(), ds.k());
    let mut out = String::from("fold,image_id,version_id");
    for kk in 1..=k {
        out.push_str(&format!(",pred_{kk}"));
    }
    for kk in 1..=k {
        out.push_str(&format!(",actual_{kk}"));
    }
    out.push('\n');
    for (fold, outcome) in outcomes.iter().enumerate() {
        for (item, pred) in &outcome.predictions {
            for mm in 0..m {
                out.push_str(&format!("{fold},{},{mm}", ds.ids[*item]));
                for kk in 0..k {
                    out.push(',');
                    out.push_str(&format_f64(pred.get(mm, kk)));
                }
                for kk in 0..k {
                    out.push(',');
                    out.push_str(&format_f64(ds.versions.get(*item, mm, kk)));
                }
                out.push('\n');
            }
        }
    }
    out
}

fn render_curves_csv(trace: &[RmsePoint]) -> String {
    let mut out = String::from("sweep,train_rmse,val_rmse\n");
    for point in trace {
        out.push_str(&point.sweep.to_string());
        out.push(',');
        out.push_str(&format_f64(point.train));
        out.push(',');
        if let Some(v) = point.validation {
            out.push_str(&format_f64(v));
        }
        out.push('\n');
    }
    out
}

/// Writes a trained model's RMSE trace as `sweep,train_rmse,val_rmse`.
pub fn report_curves(model: &TrainedModel, path: &Path) -> Result<()> {
    atomic_write(path, render_curves_csv(&model.rmse_trace).as_bytes())
}

/// Re-reads the rendered predictions CSV and confirms the per-fold RMSEs
/// match the harness's own numbers; guards the whole format-parse cycle.
fn check_rmse_parity(csv: &str, folds: usize, fold_rmse: &[f64]) -> Result<()> {
    let mut pred: Vec<Vec<f64>> = vec![Vec::new(); folds];
    let mut truth: Vec<Vec<f64>> = vec![Vec::new(); folds];
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let fold: usize = fields[0].parse().map_err(|_| Error::Invalid {
            op: "rmse parity",
            detail: format!("bad fold field {:?}", fields[0]),
        })?;
        let k = (fields.len() - 3) / 2;
        for kk in 0..k {
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Invalid {
                    op: "rmse parity",
                    detail: format!("bad float field {s:?}"),
                })
            };
            pred[fold].push(parse(fields[3 + kk])?);
            truth[fold].push(parse(fields[3 + k + kk])?);
        }
    }
    for fold in 0..folds {
        let mask = vec![1u8; pred[fold].len()];
        let r = rmse(&pred[fold], &truth[fold], &mask)?;
        if (r - fold_rmse[fold]).abs() > 1e-12 {
            return Err(Error::Invalid {
                op: "rmse parity",
                detail: format!(
                    "fold {fold}: report says {} but the saved predictions give {}",
                    format_f64(fold_rmse[fold]),
                    format_f64(r)
                ),
            });
        }
    }
    Ok(())
}

/// Runs the configured experiment end to end and writes report.json,
/// predictions.csv, and per-fold curve CSVs into the output directory.
/// Fold workers run in parallel; per-fold RNG substreams keep the result
/// independent of scheduling and core count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let ds = load_dataset(&cfg.dataset_dir)?;
    let splits = build_splits(cfg, ds.n())?;
    assert_split_hygiene(&splits, ds.n())?;

    let outcomes: Result<Vec<FoldOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = splits
            .iter()
            .enumerate()
            .map(|(f, split)| {
                let ds = &ds;
                scope.spawn(move || run_fold(ds, cfg, f, split))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().map_err(|_| Error::Invalid {
                    op: "run_experiment",
                    detail: "a fold worker panicked".to_string(),
                })?
            })
            .collect()
    });
    let outcomes = outcomes?;

    let fold_rmse: Vec<f64> = outcomes.iter().map(|o| o.test_rmse).collect();
    let mean_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
    let report = ExperimentReport {
        fold_rmse,
        mean_rmse,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outcomes,
        out_dir: cfg.out_dir.clone(),
    };

    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    let predictions = render_predictions_csv(&ds, &report.outcomes);
    check_rmse_parity(&predictions, report.outcomes.len(), &report.fold_rmse)?;
    atomic_write(&cfg.out_dir.join("predictions.csv"), predictions.as_bytes())?;
    for (f, outcome) in report.outcomes.iter().enumerate() {
        let name = if f == 0 { "curves.csv".to_string() } else { format!("curves_fold_{f}.csv") };
        atomic_write(&cfg.out_dir.join(name), render_curves_csv(&outcome.trace).as_bytes())?;
    }
    atomic_write(
        &cfg.out_dir.join("report.json"),
        render_report(cfg, &ds, &report).as_bytes(),
    )?;
    Ok(report)
}
