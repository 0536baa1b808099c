//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage error |
//! | 3 | data or validation error |
//! | 4 | training diverged |

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::Error;
use crate::estimation::{
    benchmark_comparison, expected_areas, water_consumption, ConsumptionRates, PixelGeometry,
};
use crate::evaluation::{
    evaluate_at, kfold_cv, optimal_threshold, render_confusion_mask, render_stage2_mask, roc_curve,
    save_report, threshold_probs, Stage2Mode,
};
use crate::features::{
    assemble_spec, assemble_to_disk, DiskFeatures, FeatureMatrix, FeatureSource, FeatureSpec,
    HogConfig, RowSubset,
};
use crate::learners::{
    load_model, save_model, ClassWeight, LearnerConfig, MaxFeatures, MlpConfig, RfConfig,
    SgdConfig, SgdLoss,
};
use crate::manifest::{save_timing, RunManifest};
use crate::raster_io::{
    load_annotations, load_image, load_mask, load_probability_mask, save_annotations, save_image,
    save_mask, save_ppm, save_probability_mask, BuildingClass, Mask, MaskPalette, MultibandImage,
    ProbabilityMask, MASK_NEGATIVE, STAGE2_NON_RESIDENTIAL, STAGE2_RESIDENTIAL,
};
use crate::rasterize::{rasterize_annotations, rasterize_stage2};
use crate::scenegen::{generate_scene, SceneConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

pub const THREADS_ENV: &str = "AQUIFER_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "aquifer",
    version,
    about = "Building detection and water-consumption estimation from multiband rasters"
)]
pub struct Cli {
    /// Worker threads (falls back to AQUIFER_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize polygon annotations into a ground-truth mask.
    Rasterize(RasterizeArgs),
    /// Train a pixel classifier.
    Train(TrainArgs),
    /// Predict a probability mask with a trained model.
    Predict(PredictArgs),
    /// Score a probability mask against ground truth.
    Evaluate(EvaluateArgs),
    /// Stratified k-fold cross-validation.
    Cv(CvArgs),
    /// Expected areas and daily water consumption from probability masks.
    Estimate(EstimateArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Re-run the command recorded in a manifest and check its outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    /// Every building class.
    Building,
    Residential,
    NonResidential,
    UnclassifiedBuilding,
}

#[derive(Debug, Args)]
pub struct RasterizeArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Image whose dimensions the mask takes.
    #[arg(long, required_unless_present_all = ["width", "height"])]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Classes to mark as positive.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "building")]
    pub classes: Vec<ClassArg>,
    /// Write the residential/non-residential palette instead of a binary mask.
    #[arg(long, conflicts_with = "classes")]
    pub stage2: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Building vs non-building over all pixels.
    Building,
    /// Residential vs non-residential over building pixels.
    Restype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Sgd,
    Rf,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Logistic,
    ModifiedHuber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassWeightArg {
    Balanced,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Frame width k; each pixel sees a (2k+1)x(2k+1) neighborhood.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Append HOG block descriptors (building stage only).
    #[arg(long)]
    pub hog: bool,
    #[arg(long, value_enum, default_value = "building")]
    pub stage: Stage,
    /// Spill features to a temporary file above this size.
    #[arg(long, default_value_t = 2048)]
    pub memory_budget_mb: u64,
}

#[derive(Debug, Clone, Args)]
pub struct LearnerArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Use the published hyperparameters unchanged.
    #[arg(long)]
    pub preset: bool,
    /// Learner configuration as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub class_weight: Option<ClassWeightArg>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub min_samples_split: Option<usize>,
    /// `sqrt`, `all` or a count.
    #[arg(long)]
    pub max_features: Option<String>,
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Comma-separated hidden layer sizes.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Binary building mask, or a stage-2 mask for `--stage restype`.
    #[arg(long)]
    pub mask: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Frame width; must match the model when given.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 2048)]
    pub memory_budget_mb: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub probs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Fixed threshold; the Jaccard-optimal one is searched when absent.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "building")]
    pub stage: Stage,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Seed for the fold partition (default: the learner seed).
    #[arg(long)]
    pub cv_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Out-of-fold ROC curve as CSV.
    #[arg(long)]
    pub roc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// P(building) per pixel.
    #[arg(long)]
    pub building: PathBuf,
    /// P(residential | building) per pixel.
    #[arg(long)]
    pub residential: PathBuf,
    /// Threshold both maps before summing.
    #[arg(long)]
    pub hard: bool,
    #[arg(long, default_value_t = 0.5, requires = "hard")]
    pub building_threshold: f64,
    #[arg(long, default_value_t = 0.5, requires = "hard")]
    pub residential_threshold: f64,
    #[arg(long, default_value_t = 40.0)]
    pub w_r: f64,
    #[arg(long, default_value_t = 21.0)]
    pub w_nr: f64,
    #[arg(long, default_value_t = 750.0)]
    pub occupancy: f64,
    /// Pixel side in metres (default: from the building map).
    #[arg(long)]
    pub pixel_size: Option<f64>,
    /// Scene area in km2 for the benchmark comparison (default: from the map).
    #[arg(long)]
    pub area_km2: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene configuration as JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_image: PathBuf,
    #[arg(long)]
    pub out_annotations: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest_path: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failed(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(Error::Diverged { .. }) => EXIT_DIVERGED,
            CliError::Failed(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("aquifer: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        if n == 0 {
            return usage("--threads must be >= 1");
        }
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            )),
        },
        _ => Ok(None),
    }
}

pub fn execute(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    let threads = thread_count(cli.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    let ctx = Ctx {
        argv,
        manifest: cli.manifest,
        start: Instant::now(),
    };
    pool.install(|| match cli.command {
        Command::Rasterize(a) => cmd_rasterize(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Cv(a) => cmd_cv(&ctx, a),
        Command::Estimate(a) => cmd_estimate(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Replay(a) => cmd_replay(a),
    })
}

struct Ctx {
    argv: Vec<String>,
    manifest: Option<PathBuf>,
    start: Instant,
}

impl Ctx {
    fn manifest(&self, subcommand: &str) -> RunManifest {
        RunManifest::new(subcommand, &self.argv)
    }

    fn finish(&self, m: RunManifest, primary: &Path) -> CliResult<()> {
        let path = self
            .manifest
            .clone()
            .unwrap_or_else(|| default_manifest_path(primary));
        m.save(&path)?;
        save_timing(&path, self.start.elapsed().as_secs_f64())?;
        Ok(())
    }
}

pub fn default_manifest_path(primary: &Path) -> PathBuf {
    if primary.is_dir() {
        return primary.join("manifest.json");
    }
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_rasterize(ctx: &Ctx, a: RasterizeArgs) -> CliResult<()> {
    let mut m = ctx.manifest("rasterize");
    let ann = load_annotations(&a.annotations)?;
    m.input(&a.annotations)?;
    let (w, h) = match &a.image {
        Some(p) => {
            let img = load_image(p)?;
            m.input(p)?;
            (img.width(), img.height())
        }
        None => (a.width.unwrap_or(0), a.height.unwrap_or(0)),
    };
    let classes: Vec<BuildingClass> = if a.classes.contains(&ClassArg::Building) {
        BuildingClass::ALL.to_vec()
    } else {
        a.classes
            .iter()
            .map(|c| match c {
                ClassArg::Residential => BuildingClass::Residential,
                ClassArg::NonResidential => BuildingClass::NonResidential,
                _ => BuildingClass::UnclassifiedBuilding,
            })
            .collect()
    };
    let mask = if a.stage2 {
        rasterize_stage2(&ann, w, h)?
    } else {
        rasterize_annotations(&ann, w, h, Some(&classes))?
    };
    save_mask(&mask, &a.out)?;
    m.config = json!({
        "width": w,
        "height": h,
        "palette": mask.palette(),
        "classes": if a.stage2 { vec![] } else { classes.iter().map(|c| c.as_str()).collect::<Vec<_>>() },
        "fill_rule": crate::rasterize::FILL_RULE,
    });
    m.output(&a.out)?;
    ctx.finish(m, &a.out)
}

fn parse_max_features(s: &str) -> CliResult<MaxFeatures> {
    match s {
        "sqrt" => Ok(MaxFeatures::Sqrt),
        "all" => Ok(MaxFeatures::All),
        n => match n.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(MaxFeatures::Count(k)),
            _ => usage(format!(
                "--max-features must be sqrt, all or a positive count, got {n:?}"
            )),
        },
    }
}

/// Builds the learner configuration from the preset, a config file and
/// per-field overrides.
pub fn resolve_learner(a: &LearnerArgs) -> CliResult<LearnerConfig> {
    let sgd_flags = [
        ("--loss", a.loss.is_some()),
        ("--alpha", a.alpha.is_some()),
        ("--epochs", a.epochs.is_some()),
        ("--eta0", a.eta0.is_some()),
    ];
    let rf_flags = [
        ("--trees", a.trees.is_some()),
        ("--max-depth", a.max_depth.is_some()),
        ("--min-samples-leaf", a.min_samples_leaf.is_some()),
        ("--min-samples-split", a.min_samples_split.is_some()),
        ("--max-features", a.max_features.is_some()),
        ("--no-bootstrap", a.no_bootstrap),
    ];
    let mlp_flags = [
        ("--hidden", a.hidden.is_some()),
        ("--max-iter", a.max_iter.is_some()),
        ("--batch-size", a.batch_size.is_some()),
        ("--lr", a.lr.is_some()),
        ("--patience", a.patience.is_some()),
    ];
    let set = |flags: &[(&'static str, bool)]| -> Vec<&'static str> {
        flags.iter().filter(|f| f.1).map(|f| f.0).collect()
    };
    let mut given: Vec<&str> = [set(&sgd_flags), set(&rf_flags), set(&mlp_flags)].concat();
    if a.class_weight.is_some() {
        given.push("--class-weight");
    }
    if a.preset {
        if a.config.is_some() {
            given.push("--config");
        }
        if !given.is_empty() {
            return usage(format!(
                "--preset cannot be combined with {}",
                given.join(", ")
            ));
        }
    }
    let foreign: Vec<&str> = match a.model {
        ModelKind::Sgd => [set(&rf_flags), set(&mlp_flags)].concat(),
        ModelKind::Rf => [set(&sgd_flags), set(&mlp_flags)].concat(),
        ModelKind::Mlp => [set(&sgd_flags), set(&rf_flags)].concat(),
    };
    if !foreign.is_empty() {
        return usage(format!(
            "{} do not apply to --model {:?}",
            foreign.join(", "),
            a.model
        ));
    }
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let cfg: LearnerConfig =
                serde_json::from_str(&text).map_err(|e| Error::format("config", e.to_string()))?;
            let matches = matches!(
                (&cfg, a.model),
                (LearnerConfig::Sgd(_), ModelKind::Sgd)
                    | (LearnerConfig::Rf(_), ModelKind::Rf)
                    | (LearnerConfig::Mlp(_), ModelKind::Mlp)
            );
            if !matches {
                return usage(format!("config file describes a {} model", cfg.name()));
            }
            cfg
        }
        None => match a.model {
            ModelKind::Sgd => LearnerConfig::Sgd(SgdConfig::published_preset()),
            ModelKind::Rf => LearnerConfig::Rf(RfConfig::published_preset()),
            ModelKind::Mlp => LearnerConfig::Mlp(MlpConfig::published_preset()),
        },
    };
    let cw = a.class_weight.map(|c| match c {
        ClassWeightArg::Balanced => ClassWeight::Balanced,
        ClassWeightArg::None => ClassWeight::None,
    });
    match &mut cfg {
        LearnerConfig::Sgd(c) => {
            if let Some(l) = a.loss {
                c.loss = match l {
                    LossArg::Logistic => SgdLoss::Logistic,
                    LossArg::ModifiedHuber => SgdLoss::ModifiedHuber,
                };
            }
            if let Some(v) = a.alpha {
                c.l2_alpha = v;
            }
            if let Some(v) = a.epochs {
                c.epochs = v;
            }
            if let Some(v) = a.eta0 {
                let crate::learners::LearningRateSchedule::InvScaling { eta0, .. } =
                    &mut c.learning_rate_schedule;
                *eta0 = v;
            }
            if let Some(w) = cw {
                c.class_weight = w;
            }
        }
        LearnerConfig::Rf(c) => {
            if let Some(v) = a.trees {
                c.n_estimators = v;
            }
            if let Some(v) = a.max_depth {
                c.max_depth = v;
            }
            if let Some(v) = a.min_samples_leaf {
                c.min_samples_leaf = v;
            }
            if let Some(v) = a.min_samples_split {
                c.min_samples_split = v;
            }
            if let Some(s) = &a.max_features {
                c.features_per_split = parse_max_features(s)?;
            }
            if a.no_bootstrap {
                c.bootstrap = false;
            }
            if let Some(w) = cw {
                c.class_weight = w;
            }
        }
        LearnerConfig::Mlp(c) => {
            if let Some(v) = &a.hidden {
                c.hidden_layer_sizes = v.clone();
            }
            if let Some(v) = a.max_iter {
                c.max_iter = v;
            }
            if let Some(v) = a.batch_size {
                c.batch_size = v;
            }
            if let Some(v) = a.lr {
                c.optimizer.lr = v;
            }
            if let Some(v) = a.patience {
                c.patience = v;
            }
            if let Some(w) = cw {
                c.class_weight = w;
            }
        }
    }
    if let Some(s) = a.seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn feature_spec(f: &FeatureArgs) -> CliResult<FeatureSpec> {
    if f.stage == Stage::Restype && f.hog {
        return usage(
            "--hog is not available for --stage restype; the second stage uses frame features only",
        );
    }
    Ok(FeatureSpec::new(f.k, f.hog.then(HogConfig::default)))
}

/// Assembled features, in memory or spilled to a temporary file.
enum Features {
    Memory(FeatureMatrix),
    Disk(DiskFeatures, #[allow(dead_code)] tempfile::TempDir),
}

impl Features {
    fn build(image: &MultibandImage, spec: &FeatureSpec, budget_mb: u64) -> CliResult<Self> {
        spec.validate(image)?;
        let bytes = image.pixel_count() as u64 * spec.dim(image.bands()) as u64 * 4;
        if bytes > budget_mb.saturating_mul(1 << 20) {
            let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
            let disk = assemble_to_disk(image, spec, dir.path().join("features.bin"))?;
            Ok(Features::Disk(disk, dir))
        } else {
            Ok(Features::Memory(assemble_spec(image, spec)?))
        }
    }

    fn source(&self) -> &dyn FeatureSource {
        match self {
            Features::Memory(m) => m,
            Features::Disk(d, _) => d,
        }
    }

    fn storage(&self) -> &'static str {
        match self {
            Features::Memory(_) => "memory",
            Features::Disk(..) => "disk",
        }
    }
}

/// Training rows and labels for a stage.
fn stage_rows(stage: Stage, mask: &Mask) -> CliResult<(Option<Vec<usize>>, Vec<bool>)> {
    match stage {
        Stage::Building => Ok((None, mask.positives())),
        Stage::Restype => {
            if mask.palette() != MaskPalette::Stage2 {
                return Err(Error::Validation(
                    "--stage restype needs a stage-2 mask (0 / 128 residential / 255 non-residential)".into(),
                )
                .into());
            }
            let rows: Vec<usize> = (0..mask.values().len())
                .filter(|&i| mask.values()[i] != MASK_NEGATIVE)
                .collect();
            let labels = rows
                .iter()
                .map(|&i| mask.values()[i] == STAGE2_RESIDENTIAL)
                .collect();
            Ok((Some(rows), labels))
        }
    }
}

fn load_training(
    m: &mut RunManifest,
    image: &Path,
    mask: &Path,
    f: &FeatureArgs,
) -> CliResult<(
    MultibandImage,
    FeatureSpec,
    Features,
    Option<Vec<usize>>,
    Vec<bool>,
)> {
    let spec = feature_spec(f)?;
    let img = load_image(image)?;
    m.input(image)?;
    let mask_v = load_mask(mask)?;
    m.input(mask)?;
    if (mask_v.width(), mask_v.height()) != (img.width(), img.height()) {
        return Err(Error::shape(
            format!("{}x{} mask", img.width(), img.height()),
            format!("{}x{} mask", mask_v.width(), mask_v.height()),
        )
        .into());
    }
    let (rows, labels) = stage_rows(f.stage, &mask_v)?;
    let feats = Features::build(&img, &spec, f.memory_budget_mb)?;
    Ok((img, spec, feats, rows, labels))
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> CliResult<()> {
    let mut m = ctx.manifest("train");
    let learner = resolve_learner(&a.learner)?;
    let (_, spec, feats, rows, labels) = load_training(&mut m, &a.image, &a.mask, &a.features)?;
    let x = feats.source();
    let model = match rows {
        Some(r) => learner.fit(&RowSubset::new(x, r)?, &labels)?,
        None => learner.fit(x, &labels)?,
    }
    .with_features(spec);
    save_model(&model, &a.out)?;
    m.config = json!({
        "stage": a.features.stage,
        "features": spec,
        "feature_dim": model.feature_dim,
        "learner": learner,
        "default_threshold": model.default_threshold,
        "training_rows": labels.len(),
        "feature_storage": feats.storage(),
    });
    m.seeds = vec![learner.seed()];
    m.output(&a.out)?;
    ctx.finish(m, &a.out)
}

fn cmd_predict(ctx: &Ctx, a: PredictArgs) -> CliResult<()> {
    let mut m = ctx.manifest("predict");
    let model = load_model(&a.model)?;
    m.input(&a.model)?;
    let img = load_image(&a.image)?;
    m.input(&a.image)?;
    let recorded = model.features;
    let spec = match (recorded, a.k) {
        (Some(s), None) => s,
        (Some(s), Some(k)) => FeatureSpec {
            frame: crate::features::FrameConfig::new(k),
            ..s
        },
        (None, Some(k)) => FeatureSpec::new(k, None),
        (None, None) => return usage("the model records no feature layout; pass --k"),
    };
    let provided = spec.dim(img.bands());
    if provided != model.feature_dim {
        return Err(Error::Config(format!(
            "feature dimension mismatch: model expects {} features, image and flags give {provided}",
            model.feature_dim
        ))
        .into());
    }
    let feats = Features::build(&img, &spec, a.memory_budget_mb)?;
    let probs = model.predict_proba(feats.source())?;
    let out = ProbabilityMask::from_f64(img.width(), img.height(), img.pixel_size_m(), &probs)?;
    save_probability_mask(&out, &a.out)?;
    m.config = json!({
        "model_kind": model.kind(),
        "features": spec,
        "feature_dim": model.feature_dim,
        "feature_storage": feats.storage(),
    });
    m.output(&a.out)?;
    ctx.finish(m, &a.out)
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> CliResult<()> {
    let mut m = ctx.manifest("evaluate");
    let probs = load_probability_mask(&a.probs)?;
    m.input(&a.probs)?;
    let truth = load_mask(&a.truth)?;
    m.input(&a.truth)?;
    if (probs.width(), probs.height()) != (truth.width(), truth.height()) {
        return Err(Error::shape(
            format!("{}x{} truth", truth.width(), truth.height()),
            format!("{}x{} probabilities", probs.width(), probs.height()),
        )
        .into());
    }
    if let Some(t) = a.threshold {
        if !(0.0..=1.0).contains(&t) {
            return usage(format!("--threshold must be in [0, 1], got {t}"));
        }
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let p_all = probs.probs_f64();
    let (rows, labels) = stage_rows(a.stage, &truth)?;
    let p: Vec<f64> = match &rows {
        Some(r) => r.iter().map(|&i| p_all[i]).collect(),
        None => p_all.clone(),
    };
    let threshold = match a.threshold {
        Some(t) => t,
        None => optimal_threshold(&p, &labels)?.0,
    };
    let report = evaluate_at(&p, &labels, threshold)?;
    let metrics_path = a.out_dir.join("metrics.json");
    save_report(&report, &metrics_path)?;
    let roc_path = a.out_dir.join("roc.csv");
    roc_curve(&p, &labels)?.save_csv(&roc_path)?;
    let mut outputs = vec![metrics_path, roc_path];
    match a.stage {
        Stage::Building => {
            let pred = Mask::from_bools(
                probs.width(),
                probs.height(),
                &threshold_probs(&p_all, threshold),
            )?;
            let path = a.out_dir.join("confusion.ppm");
            save_ppm(&render_confusion_mask(&pred, &truth)?, &path)?;
            outputs.push(path);
        }
        Stage::Restype => {
            let values = truth
                .values()
                .iter()
                .zip(&p_all)
                .map(|(&t, &p)| match (t, p >= threshold) {
                    (MASK_NEGATIVE, _) => MASK_NEGATIVE,
                    (_, true) => STAGE2_RESIDENTIAL,
                    (_, false) => STAGE2_NON_RESIDENTIAL,
                })
                .collect();
            let pred = Mask::new(truth.width(), truth.height(), MaskPalette::Stage2, values)?;
            let tp = a.out_dir.join("stage2_truth.ppm");
            let pp = a.out_dir.join("stage2_prediction.ppm");
            save_ppm(&render_stage2_mask(&truth, Stage2Mode::Truth)?, &tp)?;
            save_ppm(&render_stage2_mask(&pred, Stage2Mode::Prediction)?, &pp)?;
            outputs.extend([tp, pp]);
        }
    }
    m.config = json!({
        "stage": a.stage,
        "threshold_mode": if a.threshold.is_some() { "value" } else { "sweep" },
        "threshold": threshold,
        "rows": labels.len(),
    });
    for o in &outputs {
        m.output(o)?;
    }
    println!("{}", report.to_json());
    ctx.finish(m, &a.out_dir)
}

fn cmd_cv(ctx: &Ctx, a: CvArgs) -> CliResult<()> {
    if a.folds < 2 {
        return usage(format!("--folds must be >= 2, got {}", a.folds));
    }
    let mut m = ctx.manifest("cv");
    let learner = resolve_learner(&a.learner)?;
    let cv_seed = a.cv_seed.unwrap_or(learner.seed());
    let (_, spec, feats, rows, labels) = load_training(&mut m, &a.image, &a.mask, &a.features)?;
    let x = feats.source();
    let result = match rows {
        Some(r) => kfold_cv(&RowSubset::new(x, r)?, &labels, a.folds, &learner, cv_seed)?,
        None => kfold_cv(x, &labels, a.folds, &learner, cv_seed)?,
    };
    let body = json!({
        "model": learner.name(),
        "folds": result.folds,
        "mean": result.mean,
    });
    let text = serde_json::to_string_pretty(&body).expect("serializable") + "\n";
    crate::raster_io::write_bytes(&a.out, text.as_bytes())?;
    m.output(&a.out)?;
    if let Some(roc) = &a.roc {
        roc_curve(&result.out_of_fold, &labels)?.save_csv(roc)?;
        m.output(roc)?;
    }
    m.config = json!({
        "stage": a.features.stage,
        "features": spec,
        "learner": learner,
        "folds": a.folds,
        "cv_seed": cv_seed,
        "rows": labels.len(),
        "feature_storage": feats.storage(),
    });
    m.seeds = vec![learner.seed(), cv_seed];
    ctx.finish(m, &a.out)
}

fn cmd_estimate(ctx: &Ctx, a: EstimateArgs) -> CliResult<()> {
    let mut m = ctx.manifest("estimate");
    let pb = load_probability_mask(&a.building)?;
    m.input(&a.building)?;
    let pr = load_probability_mask(&a.residential)?;
    m.input(&a.residential)?;
    for t in [a.building_threshold, a.residential_threshold] {
        if !(0.0..=1.0).contains(&t) {
            return usage(format!("thresholds must be in [0, 1], got {t}"));
        }
    }
    let pixel_size = a.pixel_size.unwrap_or(pb.pixel_size_m());
    let geom = PixelGeometry::from_pixel_size(pixel_size);
    let (pb, pr) = if a.hard {
        let hard = |p: &ProbabilityMask, t: f64| -> crate::Result<ProbabilityMask> {
            let v: Vec<f32> = p
                .probs()
                .iter()
                .map(|&x| if x as f64 >= t { 1.0 } else { 0.0 })
                .collect();
            ProbabilityMask::new(p.width(), p.height(), p.pixel_size_m(), v)
        };
        (
            hard(&pb, a.building_threshold)?,
            hard(&pr, a.residential_threshold)?,
        )
    } else {
        (pb, pr)
    };
    let areas = expected_areas(&pb, &pr, geom)?;
    let rates = ConsumptionRates {
        w_r_gal_per_person_day: a.w_r,
        w_nr_gal_per_person_day: a.w_nr,
        occupancy_ft2_per_person: a.occupancy,
    };
    let mut report = water_consumption(areas.residential_m2, areas.nonresidential_m2, &rates)?;
    report.geometry = Some(geom);
    let area_km2 = a
        .area_km2
        .unwrap_or((pb.width() * pb.height()) as f64 * geom.pixel_area_m2 / 1e6);
    let bench = benchmark_comparison(&report, area_km2)?;
    let body = json!({
        "mode": if a.hard { "hard" } else { "soft" },
        "thresholds": if a.hard { json!({"building": a.building_threshold, "residential": a.residential_threshold}) } else { serde_json::Value::Null },
        "report": report,
        "benchmark": bench,
    });
    let text = serde_json::to_string_pretty(&body).expect("serializable") + "\n";
    crate::raster_io::write_bytes(&a.out, text.as_bytes())?;
    m.config =
        json!({ "rates": rates, "geometry": geom, "hard": a.hard, "image_area_km2": area_km2 });
    m.output(&a.out)?;
    println!("{text}");
    ctx.finish(m, &a.out)
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> CliResult<()> {
    let mut m = ctx.manifest("synth");
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            m.input(p)?;
            serde_json::from_str::<SceneConfig>(&text)
                .map_err(|e| Error::format("scene config", e.to_string()))?
        }
        None => SceneConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let scene = generate_scene(&cfg)?;
    save_image(&scene.image, &a.out_image)?;
    save_annotations(&scene.annotations, &a.out_annotations)?;
    m.config = serde_json::to_value(&cfg).expect("serializable");
    m.seeds = vec![cfg.seed];
    m.output(&a.out_image)?;
    m.output(&a.out_annotations)?;
    ctx.finish(m, &a.out_image)
}

fn cmd_replay(a: ReplayArgs) -> CliResult<()> {
    let manifest = RunManifest::load(&a.manifest_path)?;
    let mut args = vec![OsString::from("aquifer")];
    args.extend(manifest.argv.iter().map(OsString::from));
    let code = run(args);
    if code != EXIT_OK {
        return Err(Error::Validation(format!("replayed command exited with code {code}")).into());
    }
    let changed = manifest.changed_outputs()?;
    if !changed.is_empty() {
        return Err(Error::Validation(format!(
            "replay produced different outputs: {}",
            changed.join(", ")
        ))
        .into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn learner(args: &[&str]) -> CliResult<LearnerConfig> {
        #[derive(Parser)]
        struct T {
            #[command(flatten)]
            l: LearnerArgs,
        }
        let mut v = vec!["t"];
        v.extend_from_slice(args);
        resolve_learner(&T::try_parse_from(v).unwrap().l)
    }

    #[test]
    fn presets() {
        let LearnerConfig::Mlp(c) = learner(&["--model", "mlp", "--preset"]).unwrap() else {
            panic!()
        };
        assert_eq!(c.hidden_layer_sizes, vec![75, 25, 100, 20, 75, 25]);
        assert_eq!(c.max_iter, 1000);
        let LearnerConfig::Rf(c) = learner(&["--model", "rf", "--preset"]).unwrap() else {
            panic!()
        };
        assert_eq!(
            (
                c.n_estimators,
                c.max_depth,
                c.min_samples_leaf,
                c.min_samples_split
            ),
            (500, 50, 2, 2)
        );
        let LearnerConfig::Sgd(c) = learner(&["--model", "sgd", "--preset"]).unwrap() else {
            panic!()
        };
        assert_eq!(
            (c.loss, c.l2_alpha, c.class_weight),
            (SgdLoss::Logistic, 1e-3, ClassWeight::Balanced)
        );
    }

    #[test]
    fn preset_rejects_overrides() {
        assert!(matches!(
            learner(&["--model", "rf", "--preset", "--trees", "3"]),
            Err(CliError::Usage(_))
        ));
        assert!(learner(&["--model", "rf", "--preset", "--seed", "3"]).is_ok());
    }

    #[test]
    fn foreign_flags_rejected() {
        assert!(matches!(
            learner(&["--model", "sgd", "--trees", "3"]),
            Err(CliError::Usage(_))
        ));
        let LearnerConfig::Rf(c) =
            learner(&["--model", "rf", "--trees", "3", "--max-features", "all"]).unwrap()
        else {
            panic!()
        };
        assert_eq!(
            (c.n_estimators, c.features_per_split),
            (3, MaxFeatures::All)
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::Failed(Error::Validation("x".into())).exit_code(),
            3
        );
        assert_eq!(
            CliError::Failed(Error::Diverged { epoch: 1 }).exit_code(),
            4
        );
        assert_eq!(run(["aquifer", "cv", "--bogus"]), 2);
    }

    #[test]
    fn restype_with_hog_is_usage_error() {
        let f = FeatureArgs {
            k: 1,
            hog: true,
            stage: Stage::Restype,
            memory_budget_mb: 1,
        };
        assert!(matches!(feature_spec(&f), Err(CliError::Usage(_))));
    }
}
