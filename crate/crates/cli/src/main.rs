//! `fbptf`: batch CLI for the enhancement-parameter prediction pipeline.
//!
//! Exit codes: 0 success, 1 validation error (bad input, paths, schemas,
//! dimensions), 2 numerical failure.

use clap::{Args, Parser, Subcommand};
use fbptf_cli::config::ConfigMap;
use fbptf_cli::dataset::load_dataset;
use fbptf_cli::enhance::{enhance_image, write_enhance_outputs};
use fbptf_cli::experiment::{
    apply_config_map, report_curves, run_experiment, ExperimentConfig, ModelKind,
};
use fbptf_cli::resolve_out_path;
use fbptf_core::baselines::BaselineKind;
use fbptf_core::l21::{assemble_problem, direct_problem, solve_opts, L21Config};
use fbptf_core::matrix::{atomic_write, format_f64, Matrix};
use fbptf_core::model::{
    clip, load_model, predict, save_model, train, ClipConfig, HyperPriorConfig, ModelDims,
    TrainConfig,
};
use fbptf_core::synthetic::{generate, write_dataset, SyntheticConfig};
use fbptf_core::{Error, Result};
use fbptf_imaging::{load_image, measure_params, FeatureConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fbptf",
    about = "Feature-conditioned Bayesian tensor factorization for image enhancement parameters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark dataset directory
    GenerateSynthetic(GenerateArgs),
    /// Train a coupled model on a full dataset and save it
    Train(TrainArgs),
    /// Predict version parameters for dataset images with a saved model
    Predict(PredictArgs),
    /// Enhance one image: predict, clip, and apply all M versions
    Enhance(EnhanceArgs),
    /// Run a cross-validated experiment and write report artifacts
    Evaluate(EvaluateArgs),
    /// Baseline model operations
    Baseline(BaselineArgs),
    /// Extract feature vectors from images into a CSV
    ExtractFeatures(ExtractArgs),
    /// Measure (saturation, brightness, contrast) of images
    Measure(MeasureArgs),
    /// Write a saved model's RMSE trace as a curves CSV
    ReportCurves(CurvesArgs),
    /// Row-sparse coupling solver utilities
    L21(L21Args),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Image count
    #[arg(long, default_value_t = 1000)]
    images: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 50)]
    features: usize,
    /// Enhanced versions per image
    #[arg(long, default_value_t = 4)]
    versions: usize,
    /// Mixing weight between the nonlinear term and the feature norm
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    /// Scale on the feature-norm term (default 1/sqrt(features))
    #[arg(long)]
    norm_scale: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Configuration sources shared by the training subcommands.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines, `#` comments)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. --set train.sweeps=40 (applied after the file)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed override (applied last)
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self, dataset: PathBuf, out: PathBuf, kind: ModelKind) -> Result<ExperimentConfig> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::from_file(path)?,
            None => ConfigMap::default(),
        };
        map.apply_overrides(&self.set)?;
        let mut cfg = ExperimentConfig::new(dataset, out, kind);
        apply_config_map(&mut cfg, &map)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output model directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model directory
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory providing features and base parameters
    #[arg(long)]
    dataset: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Image indices to predict (default: all)
    #[arg(long, value_delimiter = ',')]
    rows: Option<Vec<usize>>,
    /// Clip predictions to the band around each image's base parameters
    #[arg(long)]
    clip: bool,
    /// Per-parameter upper band multipliers (with --clip)
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Per-parameter lower band multipliers (with --clip)
    #[arg(long, value_delimiter = ',')]
    zeta: Option<Vec<f64>>,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Input image (PNG or PPM)
    #[arg(long)]
    image: PathBuf,
    /// Saved model directory
    #[arg(long)]
    model: PathBuf,
    /// Output directory for version images and the parameter table
    #[arg(long)]
    out: PathBuf,
    /// Skip the clipping band
    #[arg(long)]
    no_clip: bool,
    /// Per-parameter upper band multipliers (default 0.4,0.4,0.05)
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Per-parameter lower band multipliers (default 0.3,0.3,0.01)
    #[arg(long, value_delimiter = ',')]
    zeta: Option<Vec<f64>>,
    /// Per-axis application tolerance
    #[arg(long, default_value_t = fbptf_imaging::DEFAULT_APPLY_TOL)]
    tol: f64,
    /// Per-axis application evaluation budget
    #[arg(long, default_value_t = fbptf_imaging::DEFAULT_APPLY_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for report artifacts
    #[arg(long)]
    out: PathBuf,
    /// Model kind: fbptf, bpmf, dbptf, mlr, or wknn
    #[arg(long, default_value = "fbptf")]
    model: String,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(subcommand)]
    command: BaselineCommand,
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Run a cross-validated baseline experiment
    Run(BaselineRunArgs),
}

#[derive(Args)]
struct BaselineRunArgs {
    /// Baseline kind: bpmf, dbptf, mlr, or wknn
    #[arg(long)]
    kind: String,
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for report artifacts
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ExtractArgs {
    /// Output CSV path (one row per image: filename, then feature values)
    #[arg(long)]
    out: PathBuf,
    /// Input images
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct MeasureArgs {
    /// Input images
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Saved model directory
    #[arg(long)]
    model: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct L21Args {
    #[command(subcommand)]
    command: L21Command,
}

#[derive(Subcommand)]
enum L21Command {
    /// Solve one coupling problem from CSV inputs (debugging aid)
    Solve(L21SolveArgs),
}

#[derive(Args)]
struct L21SolveArgs {
    /// Feature matrix CSV, one column per item (assembles the coupling
    /// problem; mutually exclusive with --z)
    #[arg(long, conflicts_with = "z")]
    features: Option<PathBuf>,
    /// Constraint matrix CSV for a direct problem
    #[arg(long)]
    z: Option<PathBuf>,
    /// Target matrix CSV (U^T for assembled problems, B for direct ones)
    #[arg(long)]
    b: PathBuf,
    /// Solution CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Optional JSONL iteration trace output path
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 3.0)]
    delta: f64,
    #[arg(long, default_value_t = 1e-10)]
    epsilon: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

fn band_config(lambda: &Option<Vec<f64>>, zeta: &Option<Vec<f64>>) -> ClipConfig {
    let mut cfg = ClipConfig::enhancement_default();
    if let Some(l) = lambda {
        cfg.lambda = l.clone();
    }
    if let Some(z) = zeta {
        cfg.zeta = z.clone();
    }
    cfg
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n: args.images,
        l: args.features,
        m: args.versions,
        eta: args.eta,
        norm_scale: args.norm_scale,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let ds = generate(&cfg)?;
    let out = resolve_out_path(&args.out);
    write_dataset(&ds, &out)?;
    println!(
        "wrote {} images ({} versions, {} features) to {}",
        cfg.n,
        cfg.m,
        cfg.l,
        out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let out = resolve_out_path(&args.out);
    let cfg = args.config.build(args.dataset.clone(), out.clone(), ModelKind::Fbptf)?;
    let ds = load_dataset(&cfg.dataset_dir)?;
    let rows: Vec<usize> = (0..ds.n()).collect();
    let dims = ModelDims { n: ds.n(), m: ds.m(), k: ds.k(), d: ds.k() + ds.l() };
    let delta = ds.delta_rows(&rows)?;
    let features = ds.inputs_for(&rows)?;
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
        seed: cfg.seed,
        feature_coupling: true,
        track_rmse_every: cfg.track_rmse_every,
        fix_t_to_ones: false,
    };
    let model = train(&delta, Some(&features), &dims, &hyper, &tc, None)?;
    save_model(&model, &out)?;
    println!(
        "trained on {} images for {} sweeps; {} snapshots saved to {}",
        dims.n,
        cfg.sweeps,
        model.samples.len(),
        out.display()
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let ds = load_dataset(&args.dataset)?;
    if model.dims.d != ds.k() + ds.l() || model.dims.k != ds.k() {
        return Err(Error::Dimension {
            op: "predict",
            detail: format!(
                "model expects {} inputs and {} parameters, dataset provides {} and {}",
                model.dims.d,
                model.dims.k,
                ds.k() + ds.l(),
                ds.k()
            ),
        });
    }
    let rows: Vec<usize> = match &args.rows {
        Some(r) => r.clone(),
        None => (0..ds.n()).collect(),
    };
    let band = args.clip.then(|| band_config(&args.lambda, &args.zeta));
    let mut csv = String::from("image_id,version_id");
    for kk in 1..=ds.k() {
        csv.push_str(&format!(",pred_{kk}"));
    }
    csv.push('\n');
    for &item in &rows {
        let f_t = ds.inputs_for(&[item])?.col(0);
        let a_t = ds.a.col(item);
        let mut pred = predict(&model, &f_t, &a_t)?;
        if let Some(cfg) = &band {
            pred = clip(&pred, &a_t, cfg)?;
        }
        for mm in 0..pred.rows() {
            csv.push_str(&format!("{},{mm}", ds.ids[item]));
            for kk in 0..ds.k() {
                csv.push(',');
                csv.push_str(&format_f64(pred.get(mm, kk)));
            }
            csv.push('\n');
        }
    }
    let out = resolve_out_path(&args.out);
    atomic_write(&out, csv.as_bytes())?;
    println!("wrote {} predictions to {}", rows.len() * model.dims.m, out.display());
    Ok(())
}

fn cmd_enhance(args: &EnhanceArgs) -> Result<()> {
    let img = load_image(&args.image)?;
    let model = load_model(&args.model)?;
    let band = (!args.no_clip).then(|| band_config(&args.lambda, &args.zeta));
    let result = enhance_image(
        &img,
        &model,
        band.as_ref(),
        &FeatureConfig::default(),
        args.tol,
        args.max_iter,
    )?;
    let out = resolve_out_path(&args.out);
    write_enhance_outputs(&result, &out)?;
    let a = result.measured.as_array();
    println!(
        "input: saturation {:.4}, brightness {:.4}, contrast {:.4}",
        a[0], a[1], a[2]
    );
    for (j, v) in result.versions.iter().enumerate() {
        let t = v.outcome.achieved.as_array();
        println!(
            "version {}: saturation {:.4}, brightness {:.4}, contrast {:.4}{}",
            j + 1,
            t[0],
            t[1],
            t[2],
            if v.outcome.converged.iter().all(|c| *c) { "" } else { " (off target)" }
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn run_and_print_experiment(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_experiment(cfg)?;
    println!("model: {}", cfg.kind.name());
    for (f, r) in report.fold_rmse.iter().enumerate() {
        println!("fold {f}: test RMSE {r:.6}");
    }
    println!("mean test RMSE: {:.6}", report.mean_rmse);
    println!("report: {}", cfg.out_dir.join("report.json").display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let kind = ModelKind::parse(&args.model)?;
    let out = resolve_out_path(&args.out);
    let cfg = args.config.build(args.dataset.clone(), out, kind)?;
    run_and_print_experiment(&cfg)
}

fn cmd_baseline_run(args: &BaselineRunArgs) -> Result<()> {
    let kind = ModelKind::Baseline(BaselineKind::parse(&args.kind)?);
    let out = resolve_out_path(&args.out);
    let cfg = args.config.build(args.dataset.clone(), out, kind)?;
    run_and_print_experiment(&cfg)
}

fn cmd_extract_features(args: &ExtractArgs) -> Result<()> {
    let cfg = FeatureConfig::default();
    let mut csv = String::new();
    for path in &args.images {
        let img = load_image(path)?;
        let features = fbptf_imaging::extract_features(&img, &cfg)?;
        csv.push_str(&path.display().to_string());
        for v in &features {
            csv.push(',');
            csv.push_str(&format_f64(*v));
        }
        csv.push('\n');
    }
    let out = resolve_out_path(&args.out);
    atomic_write(&out, csv.as_bytes())?;
    println!(
        "wrote {} feature rows of length {} to {}",
        args.images.len(),
        cfg.feature_len(),
        out.display()
    );
    Ok(())
}

fn cmd_measure(args: &MeasureArgs) -> Result<()> {
    println!("file,saturation,brightness,contrast");
    for path in &args.images {
        let img = load_image(path)?;
        let p = measure_params(&img).as_array();
        println!(
            "{},{},{},{}",
            path.display(),
            format_f64(p[0]),
            format_f64(p[1]),
            format_f64(p[2])
        );
    }
    Ok(())
}

fn cmd_report_curves(args: &CurvesArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    if model.rmse_trace.is_empty() {
        return Err(Error::Invalid {
            op: "report-curves",
            detail: format!("{} carries no RMSE trace", args.model.display()),
        });
    }
    let out = resolve_out_path(&args.out);
    report_curves(&model, &out)?;
    println!("wrote {} trace rows to {}", model.rmse_trace.len(), out.display());
    Ok(())
}

fn cmd_l21_solve(args: &L21SolveArgs) -> Result<()> {
    let cfg = L21Config {
        beta: args.beta,
        delta: args.delta,
        epsilon: args.epsilon,
        max_iter: args.max_iter,
        tol: args.tol,
    };
    let b = Matrix::read_csv_file(&args.b)?;
    let problem = match (&args.features, &args.z) {
        (Some(f), None) => assemble_problem(&Matrix::read_csv_file(f)?, &b, &cfg)?,
        (None, Some(z)) => direct_problem(Matrix::read_csv_file(z)?, b)?,
        _ => {
            return Err(Error::Invalid {
                op: "l21 solve",
                detail: "exactly one of --features or --z is required".to_string(),
            })
        }
    };
    let solution = solve_opts(&problem, &cfg, args.trace.is_some())?;
    let out = resolve_out_path(&args.out);
    atomic_write(&out, solution.x.to_csv_string().as_bytes())?;
    if let Some(trace_path) = &args.trace {
        let mut trace = String::new();
        for (i, obj) in solution.objective_trace.iter().enumerate() {
            trace.push_str(&format!(
                "{{\"iter\": {i}, \"objective\": {}, \"residual\": {}}}\n",
                format_f64(*obj),
                format_f64(solution.residual_trace[i])
            ));
        }
        atomic_write(&resolve_out_path(trace_path), trace.as_bytes())?;
    }
    println!(
        "{} after {} iterations; feasibility residual {}",
        if solution.converged { "converged" } else { "stopped" },
        solution.iterations,
        format_f64(solution.feasibility_residual)
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateSynthetic(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Enhance(args) => cmd_enhance(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Baseline(args) => match &args.command {
            BaselineCommand::Run(run) => cmd_baseline_run(run),
        },
        Command::ExtractFeatures(args) => cmd_extract_features(args),
        Command::Measure(args) => cmd_measure(args),
        Command::ReportCurves(args) => cmd_report_curves(args),
        Command::L21(args) => match &args.command {
            L21Command::Solve(solve) => cmd_l21_solve(solve),
        },
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; usage mistakes are
            // validation failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_validation() { 1 } else { 2 });
    }
}
