//! Batch command-line surface tying the pipeline together.
//!
//! Commands: `simulate`, `gen-dataset`, `train`, `predict`, `eval`,
//! `reconstruct`, `gradcheck`. Every command is deterministic given its flags
//! and seeds, each output file carries enough sidecar metadata to reproduce
//! it, and nothing is overwritten without `--force`.
//!
//! Exit codes: 0 ok, 2 input validation, 3 referential integrity,
//! 4 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::dataset::{
    build_dataset, inject_positioning_errors, DatasetError, DatasetParams, Sample, Split,
};
use crate::formats::{
    read_footprints, read_gray32, read_json, read_predictions, sidecar_path, write_gray32,
    write_json, write_loss_log, write_predictions, FormatError, Manifest, ManifestSample,
    Prediction, SceneMeta,
};
use crate::geometry::SensorModel;
use crate::height::{extrude_lod1, height_from_boxes, metrics, obj_string, HeightError};
use crate::model::{
    self, read_weights, train, write_weights, BbrModel, ModelConfig, ModelError, TrainConfig,
};
use crate::nn;
use crate::raster::{Dims, Grid32};
use crate::simulate::{render, ReflectivityProfile, Scene, SimulateError};

/// Error with a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Referential(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Referential(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<HeightError> for CliError {
    fn from(e: HeightError) -> Self {
        match e {
            HeightError::MissingTrueHeight(_) => CliError::Referential(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            ModelError::IdCollision(_) => CliError::Referential(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sarbbr",
    about = "Per-building height retrieval from single slant-range SAR amplitude images",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic SAR amplitude scene from building footprints.
    Simulate(SimulateArgs),
    /// Build a training/testing dataset from a scene and footprints.
    GenDataset(GenDatasetArgs),
    /// Train the footprint-guided box regressor on a dataset.
    Train(TrainArgs),
    /// Predict building boxes for a dataset split with a trained model.
    Predict(PredictArgs),
    /// Score a predictions file against a dataset manifest.
    Eval(EvalArgs),
    /// Extrude LoD1 prism models from predicted boxes and footprints.
    Reconstruct(ReconstructArgs),
    /// Verify analytic gradients of every layer and a tiny end-to-end model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SensorArgs {
    /// Incidence angle in degrees.
    #[arg(long, default_value_t = 36.08)]
    theta: f64,
    /// Slant-range pixel spacing in meters.
    #[arg(long, default_value_t = 0.455)]
    spacing_rg: f64,
    /// Azimuth pixel spacing in meters.
    #[arg(long, default_value_t = 0.871)]
    spacing_az: f64,
    /// Pixel offset of the world origin along rg.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rg_origin: f64,
    /// Pixel offset of the world origin along az.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    az_origin: f64,
}

impl SensorArgs {
    fn build(&self) -> Result<SensorModel, CliError> {
        SensorModel::new(
            self.theta,
            self.spacing_rg,
            self.spacing_az,
            self.rg_origin,
            self.az_origin,
        )
        .map_err(|e| CliError::Validation(e.to_string()))
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Building footprints JSON.
    #[arg(long)]
    footprints: PathBuf,
    #[command(flatten)]
    sensor: SensorArgs,
    /// Scene size as ROWSxCOLS (azimuth rows, range columns).
    #[arg(long)]
    dims: String,
    /// Speckle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render the noiseless limit (E = 1) instead of speckle.
    #[arg(long)]
    no_speckle: bool,
    /// Region reflectivities as ground,roof,layover,double_bounce,shadow.
    #[arg(long)]
    profile: Option<String>,
    /// Output raster (.gray32); a .meta.json sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct GenDatasetArgs {
    /// Scene raster from `simulate` (the .meta.json sidecar must exist).
    #[arg(long)]
    scene: PathBuf,
    /// Building footprints JSON.
    #[arg(long)]
    footprints: PathBuf,
    /// Patch size in pixels.
    #[arg(long, default_value_t = 256)]
    patch: usize,
    /// Cropping stride in pixels.
    #[arg(long, default_value_t = 150)]
    stride: usize,
    /// Train fraction of the azimuth split.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Guard band around the split boundary, pixels.
    #[arg(long, default_value_t = 0.0)]
    guard: f64,
    /// Histogram bins for the stale-building intensity mode.
    #[arg(long, default_value_t = 256)]
    bins: usize,
    /// Perturb footprints before projection: mu=4.13,sigma=1.71,seed=N.
    #[arg(long)]
    inject_errors: Option<String>,
    /// Output directory (patches/, masks/, manifest.json, filter_report.json).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    plateau_factor: f64,
    #[arg(long, default_value_t = 3)]
    plateau_patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    plateau_min_delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Backbone stage widths, comma separated.
    #[arg(long, default_value = "16,32,64")]
    channels: String,
    /// Post-RoI stage width.
    #[arg(long, default_value_t = 128)]
    head: usize,
    /// Convs per stage.
    #[arg(long, default_value_t = 2)]
    convs: usize,
    /// RoI-align output grid.
    #[arg(long, default_value_t = 7)]
    roi: usize,
    /// Bilinear samples per RoI bin axis.
    #[arg(long, default_value_t = 2)]
    roi_samples: usize,
    /// Network input size; patches of other sizes are rescaled to this.
    #[arg(long, default_value_t = 256)]
    input_size: usize,
    /// Output weights file; a .meta.json sidecar and a .loss.csv log are
    /// written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Loss log path (default: the weights path with extension loss.csv).
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Trained weights from `train` (with its .meta.json sidecar).
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Which split to predict.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output predictions CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predictions CSV (from `predict` or any external producer).
    #[arg(long)]
    pred: PathBuf,
    /// Dataset manifest.json.
    #[arg(long)]
    manifest: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Predictions CSV.
    #[arg(long)]
    pred: PathBuf,
    /// Building footprints JSON.
    #[arg(long)]
    footprints: PathBuf,
    /// Dataset manifest.json (provides footprint boxes and the sensor).
    #[arg(long)]
    manifest: PathBuf,
    /// Output OBJ file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Training sidecar: everything needed to rebuild the network that the
/// weights file parameterizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Parse and run a command line (first element is the program name).
/// Returns the error carrying the process exit code on failure.
pub fn run<I, S>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args).map_err(|e| {
        // clap help/version "errors" print and exit 0; real parse errors are
        // input validation.
        if e.use_stderr() {
            CliError::Validation(e.to_string())
        } else {
            print!("{e}");
            CliError::Validation(String::new())
        }
    })?;
    check_thread_cap()?;
    match cli.cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::GenDataset(a) => cmd_gen_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// SARBBR_THREADS caps internal parallelism. The compute kernels run on one
/// thread, which respects any positive cap; the value is still validated so
/// typos fail loudly.
fn check_thread_cap() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SARBBR_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Validation(format!("SARBBR_THREADS={v:?} is not a number")))?;
        if n == 0 {
            return Err(CliError::Validation(
                "SARBBR_THREADS must be at least 1".into(),
            ));
        }
    }
    Ok(())
}

fn ensure_writable(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Validation(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn parse_dims(s: &str) -> Result<Dims, CliError> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let err = || CliError::Validation(format!("--dims expects ROWSxCOLS, got {s:?}"));
    if parts.len() != 2 {
        return Err(err());
    }
    let rows = parts[0].trim().parse().map_err(|_| err())?;
    let cols = parts[1].trim().parse().map_err(|_| err())?;
    if rows == 0 || cols == 0 {
        return Err(err());
    }
    Ok(Dims::new(rows, cols))
}

fn parse_profile(s: &str) -> Result<ReflectivityProfile, CliError> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Validation(format!("--profile: {e}")))?;
    if vals.len() != 5 {
        return Err(CliError::Validation(
            "--profile expects 5 values: ground,roof,layover,double_bounce,shadow".into(),
        ));
    }
    let profile = ReflectivityProfile {
        ground: vals[0],
        roof: vals[1],
        layover: vals[2],
        double_bounce: vals[3],
        shadow: vals[4],
    };
    profile.validate()?;
    Ok(profile)
}

/// Parse `mu=4.13,sigma=1.71,seed=7` (keys in any order, all required).
fn parse_error_model(s: &str) -> Result<(f64, f64, u64), CliError> {
    let mut map = BTreeMap::new();
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--inject-errors: expected key=value, got {part:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        map.get(k)
            .ok_or_else(|| CliError::Validation(format!("--inject-errors: missing {k}")))
    };
    let mu: f64 = get("mu")?
        .parse()
        .map_err(|e| CliError::Validation(format!("--inject-errors mu: {e}")))?;
    let sigma: f64 = get("sigma")?
        .parse()
        .map_err(|e| CliError::Validation(format!("--inject-errors sigma: {e}")))?;
    let seed: u64 = get("seed")?
        .parse()
        .map_err(|e| CliError::Validation(format!("--inject-errors seed: {e}")))?;
    Ok((mu, sigma, seed))
}

fn parse_channels(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Validation(format!("--channels: {e}")))
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let sensor = a.sensor.build()?;
    let dims = parse_dims(&a.dims)?;
    let profile = match &a.profile {
        Some(s) => parse_profile(s)?,
        None => ReflectivityProfile::default(),
    };
    let buildings = read_footprints(&a.footprints)?;
    ensure_writable(&a.out, a.force)?;
    let meta_path = sidecar_path(&a.out);
    ensure_writable(&meta_path, a.force)?;

    let speckle = if a.no_speckle { None } else { Some(a.seed) };
    let scene = render(&buildings, &sensor, &profile, speckle, dims)?;
    write_gray32(&a.out, &scene.amplitude)?;
    write_json(
        &meta_path,
        &SceneMeta {
            sensor,
            dims,
            speckle_seed: speckle,
            profile,
        },
    )?;
    eprintln!(
        "rendered {} buildings into {} ({}x{})",
        buildings.len(),
        a.out.display(),
        dims.rows,
        dims.cols
    );
    Ok(())
}

/// Extended dataset build report: the stale filter outcome plus coverage
/// bookkeeping.
#[derive(Debug, Serialize, Deserialize)]
pub struct BuildReport {
    pub threshold: f64,
    pub dropped: Vec<String>,
    pub uncovered: Vec<String>,
    pub excluded_by_guard: Vec<String>,
}

fn cmd_gen_dataset(a: GenDatasetArgs) -> Result<(), CliError> {
    let amplitude = read_gray32(&a.scene)?;
    let meta: SceneMeta = read_json(&sidecar_path(&a.scene))?;
    if meta.dims != amplitude.dims {
        return Err(CliError::Validation(format!(
            "scene raster is {}x{} but its sidecar says {}x{}",
            amplitude.dims.rows, amplitude.dims.cols, meta.dims.rows, meta.dims.cols
        )));
    }
    let mut buildings = read_footprints(&a.footprints)?;
    if let Some(spec) = &a.inject_errors {
        let (mu, sigma, seed) = parse_error_model(spec)?;
        buildings = inject_positioning_errors(&buildings, mu, sigma, seed)?;
    }
    let manifest_path = a.out.join("manifest.json");
    ensure_writable(&manifest_path, a.force)?;

    let scene = Scene {
        sensor: meta.sensor,
        amplitude,
        buildings: Vec::new(),
    };
    let params = DatasetParams {
        patch_size: a.patch,
        stride: a.stride,
        split_fraction: a.split,
        guard_px: a.guard,
        histogram_bins: a.bins,
    };
    let built = build_dataset(&scene, &buildings, &params)?;

    let mut samples_meta = Vec::with_capacity(built.samples.len());
    for s in &built.samples {
        let stem = format!("{}_{}_{}.gray32", s.building_id, s.patch_origin.0, s.patch_origin.1);
        let patch_rel = format!("patches/{stem}");
        let mask_rel = format!("masks/{stem}");
        write_gray32(&a.out.join(&patch_rel), &s.patch)?;
        write_gray32(&a.out.join(&mask_rel), &s.mask)?;
        samples_meta.push(ManifestSample {
            id: s.building_id.clone(),
            split: s.split,
            patch: patch_rel,
            mask: mask_rel,
            footprint_box: s.footprint_box.as_array(),
            gt_box: s.gt_box.as_array(),
            height_m: s.true_height,
            patch_origin: [s.patch_origin.0, s.patch_origin.1],
        });
    }
    let manifest = Manifest {
        sensor: meta.sensor,
        patch_size: a.patch,
        stride: a.stride,
        normalization: built.normalization,
        samples: samples_meta,
    };
    write_json(&manifest_path, &manifest)?;
    write_json(
        &a.out.join("filter_report.json"),
        &BuildReport {
            threshold: built.filter_report.threshold,
            dropped: built.filter_report.dropped.clone(),
            uncovered: built.uncovered.clone(),
            excluded_by_guard: built.excluded_by_guard.clone(),
        },
    )?;
    for id in &built.uncovered {
        eprintln!("warning: no patch fully contains building {id}");
    }
    eprintln!(
        "wrote {} samples ({} stale-dropped, {} uncovered, {} guard-excluded) to {}",
        manifest.samples.len(),
        built.filter_report.dropped.len(),
        built.uncovered.len(),
        built.excluded_by_guard.len(),
        a.out.display()
    );
    Ok(())
}

/// Load manifest samples (optionally one split) with their rasters.
pub fn load_samples(
    dir: &Path,
    manifest: &Manifest,
    split: Option<Split>,
) -> Result<Vec<Sample>, CliError> {
    let mut out = Vec::new();
    for m in &manifest.samples {
        if let Some(s) = split {
            if m.split != s {
                continue;
            }
        }
        let patch = read_gray32(&dir.join(&m.patch))?;
        let mask = read_gray32(&dir.join(&m.mask))?;
        out.push(Sample {
            building_id: m.id.clone(),
            patch_origin: (m.patch_origin[0], m.patch_origin[1]),
            split: m.split,
            footprint_box: m.footprint_bbox(),
            gt_box: m.gt_bbox(),
            true_height: m.height_m,
            patch,
            mask,
        });
    }
    Ok(out)
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let manifest: Manifest = read_json(&a.data.join("manifest.json"))?;
    let samples = load_samples(&a.data, &manifest, Some(Split::Train))?;
    let model_cfg = ModelConfig {
        stage_channels: parse_channels(&a.channels)?,
        head_channels: a.head,
        convs_per_stage: a.convs,
        roi_size: a.roi,
        roi_samples: a.roi_samples,
        input_size: a.input_size,
    };
    model_cfg.validate()?;
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        plateau_factor: a.plateau_factor,
        plateau_patience: a.plateau_patience,
        plateau_min_delta: a.plateau_min_delta,
        seed: a.seed,
    };
    ensure_writable(&a.out, a.force)?;
    let loss_log_path = a
        .loss_log
        .clone()
        .unwrap_or_else(|| a.out.with_extension("loss.csv"));
    ensure_writable(&loss_log_path, a.force)?;
    let meta_path = sidecar_path(&a.out);
    ensure_writable(&meta_path, a.force)?;

    let (trained, log) = train(&samples, &model_cfg, &train_cfg)?;
    write_weights(&a.out, &trained)?;
    write_json(
        &meta_path,
        &ModelMeta {
            model: model_cfg,
            train: train_cfg,
        },
    )?;
    write_loss_log(
        &loss_log_path,
        &log.iter()
            .map(|e| (e.epoch, e.mean_loss, e.lr))
            .collect::<Vec<_>>(),
    )?;
    if let Some(last) = log.last() {
        eprintln!(
            "trained {} epochs on {} samples, final mean loss {:.6}",
            last.epoch,
            samples.len(),
            last.mean_loss
        );
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(CliError::Validation(format!(
            "--split must be train or test, got {other:?}"
        ))),
    }
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let split = parse_split(&a.split)?;
    let meta: ModelMeta = read_json(&sidecar_path(&a.model))?;
    let model = read_weights(&a.model, &meta.model)?;
    let manifest: Manifest = read_json(&a.data.join("manifest.json"))?;
    let samples = load_samples(&a.data, &manifest, Some(split))?;
    ensure_writable(&a.out, a.force)?;
    let preds = model::predict(&model, &samples, split)?;
    let rows: Vec<Prediction> = preds
        .into_iter()
        .map(|(building_id, bbox)| Prediction { building_id, bbox })
        .collect();
    write_predictions(&a.out, &rows)?;
    eprintln!("wrote {} predictions to {}", rows.len(), a.out.display());
    Ok(())
}

/// Scene-coordinate footprint box, ground-truth box, and height per building
/// id. Samples of the same building agree on these by construction.
fn building_table(manifest: &Manifest) -> BTreeMap<String, (BBox, BBox, f64)> {
    let mut map = BTreeMap::new();
    for m in &manifest.samples {
        let (r0, c0) = (m.patch_origin[0] as f64, m.patch_origin[1] as f64);
        let fb = m.footprint_bbox().translated(c0, r0);
        let gt = m.gt_bbox().translated(c0, r0);
        map.entry(m.id.clone()).or_insert((fb, gt, m.height_m));
    }
    map
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let preds = read_predictions(&a.pred)?;
    let manifest: Manifest = read_json(&a.manifest)?;
    ensure_writable(&a.report, a.force)?;
    let table = building_table(&manifest);

    let unknown: Vec<String> = preds
        .iter()
        .filter(|p| !table.contains_key(&p.building_id))
        .map(|p| p.building_id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::Referential(format!(
            "predictions reference {} building id(s) not in the manifest: {}",
            unknown.len(),
            unknown.join(", ")
        )));
    }

    let mut results = Vec::with_capacity(preds.len());
    for p in &preds {
        let (fb, _, height) = &table[&p.building_id];
        let mut r = height_from_boxes(&p.building_id, &p.bbox, fb, &manifest.sensor);
        r.true_height = Some(*height);
        results.push(r);
    }
    let report = metrics(&results)?;
    write_json(&a.report, &report)?;
    println!(
        "he_mean {:.3} m, he_std {:.3} m, mae {:.3} m over {} buildings ({} clamped)",
        report.he_mean_m, report.he_std_m, report.mae_m, report.n, report.clamped_count
    );
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<(), CliError> {
    let preds = read_predictions(&a.pred)?;
    let manifest: Manifest = read_json(&a.manifest)?;
    let buildings = read_footprints(&a.footprints)?;
    ensure_writable(&a.out, a.force)?;
    let table = building_table(&manifest);
    let by_id: BTreeMap<&str, &crate::simulate::BuildingRecord> =
        buildings.iter().map(|b| (b.id.as_str(), b)).collect();

    let mut meshes = Vec::new();
    let mut skipped = 0usize;
    for p in &preds {
        let Some((fb, _, _)) = table.get(&p.building_id) else {
            return Err(CliError::Referential(format!(
                "prediction {} not in the manifest",
                p.building_id
            )));
        };
        let Some(record) = by_id.get(p.building_id.as_str()) else {
            return Err(CliError::Referential(format!(
                "prediction {} not in the footprints file",
                p.building_id
            )));
        };
        let h = height_from_boxes(&p.building_id, &p.bbox, fb, &manifest.sensor);
        match extrude_lod1(record, h.predicted_height) {
            Ok(mesh) => meshes.push(mesh),
            Err(HeightError::ZeroHeightPrism(id)) => {
                eprintln!("notice: {id} has zero predicted height, no prism emitted");
                skipped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    std::fs::write(&a.out, obj_string(&meshes))
        .map_err(|e| CliError::Validation(format!("{}: {e}", a.out.display())))?;
    eprintln!(
        "wrote {} prisms to {} ({skipped} zero-height skipped)",
        meshes.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let report = gradcheck_report(a.seed)?;
    for (name, err, gate) in &report {
        println!("{name:28} max rel err {err:.3e} (gate {gate:.0e})");
    }
    let worst = report
        .iter()
        .filter(|(_, err, gate)| err > gate)
        .map(|(name, err, _)| format!("{name}: {err:.3e}"))
        .collect::<Vec<_>>();
    if worst.is_empty() {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: {}",
            worst.join(", ")
        )))
    }
}

/// Layer-by-layer and end-to-end gradient verification, returning
/// `(name, max rel err, gate)` rows.
pub fn gradcheck_report(seed: u64) -> Result<Vec<(String, f64, f64)>, CliError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::seedmix::mix(seed, 0x6763));
    let mut rows = Vec::new();
    let numerical = |e: nn::NnError| CliError::Numerical(e.to_string());

    // conv2d over inputs, kernel, and bias.
    {
        let input = nn::Tensor3::from_vec(2, 6, 7, (0..84).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let kernel: Vec<f64> = (0..2 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = nn::conv2d_forward(&input, &kernel, 3, 3, &bias, 1, 1).map_err(numerical)?;
        let probe: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad_out = nn::Tensor3::from_vec(out.c, out.h, out.w, probe.clone());
        let grads = nn::conv2d_backward(&input, &kernel, 3, 3, 1, 1, &grad_out).map_err(numerical)?;
        let mut point = input.data.clone();
        point.extend_from_slice(&kernel);
        point.extend_from_slice(&bias);
        let mut analytic = grads.dinput.data.clone();
        analytic.extend_from_slice(&grads.dkernel);
        analytic.extend_from_slice(&grads.dbias);
        let err = nn::gradcheck(
            |p| {
                let x = nn::Tensor3::from_vec(2, 6, 7, p[..84].to_vec());
                let y = nn::conv2d_forward(&x, &p[84..84 + 54], 3, 3, &p[138..], 1, 1).unwrap();
                y.data.iter().zip(&probe).map(|(v, q)| v * q).sum()
            },
            &point,
            &analytic,
            1e-5,
        )
        .map_err(numerical)?;
        rows.push(("conv2d".to_string(), err, 1e-4));
    }

    // RoI-align over the feature map.
    {
        let feat = nn::Tensor3::from_vec(2, 8, 8, (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let roi = BBox::new(4.3, 3.9, 3.1, 4.4).unwrap();
        let cfg = nn::RoiAlignCfg::default();
        let out = nn::roi_align_forward(&feat, &roi, 1.0, cfg).map_err(numerical)?;
        let probe: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = nn::Tensor3::from_vec(out.c, out.h, out.w, probe.clone());
        let analytic = nn::roi_align_backward((2, 8, 8), &roi, 1.0, cfg, &g).map_err(numerical)?;
        let err = nn::gradcheck(
            |p| {
                let t = nn::Tensor3::from_vec(2, 8, 8, p.to_vec());
                let y = nn::roi_align_forward(&t, &roi, 1.0, cfg).unwrap();
                y.data.iter().zip(&probe).map(|(v, q)| v * q).sum()
            },
            &feat.data,
            &analytic.data,
            1e-5,
        )
        .map_err(numerical)?;
        rows.push(("roi_align".to_string(), err, 1e-4));
    }

    // CIoU loss over the predicted box coordinates.
    {
        let pred = BBox::new(1.0, 0.5, 2.0, 3.0).unwrap();
        let g = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let value = crate::bbox::ciou_loss(&pred, &g);
        let err = nn::gradcheck(
            |p| {
                crate::bbox::ciou_loss_alpha_frozen(
                    &BBox::new(p[0], p[1], p[2], p[3]).unwrap(),
                    &g,
                    value.alpha,
                )
            },
            &pred.as_array(),
            &value.gradient,
            1e-5,
        )
        .map_err(numerical)?;
        rows.push(("ciou_loss".to_string(), err, 1e-4));
    }

    // Full tiny model end to end.
    {
        let cfg = ModelConfig {
            stage_channels: vec![2],
            head_channels: 3,
            convs_per_stage: 1,
            roi_size: 3,
            roi_samples: 1,
            input_size: 16,
        };
        let model = BbrModel::init(cfg.clone(), seed)?;
        let dims = Dims::new(16, 16);
        let mut patch = Grid32::filled(dims, 0.1);
        let mut mask = Grid32::filled(dims, 0.0);
        for r in 4..10 {
            for c in 5..9 {
                patch.set(r, c, 0.8);
                mask.set(r, c, 1.0);
            }
        }
        let sample = Sample {
            building_id: "gradcheck".into(),
            patch_origin: (0, 0),
            split: Split::Train,
            footprint_box: BBox::new(7.0, 7.0, 4.0, 6.0).unwrap(),
            gt_box: BBox::new(5.5, 6.0, 6.0, 7.0).unwrap(),
            true_height: 5.0,
            patch,
            mask,
        };
        let input = model::prepare_input(&sample, cfg.input_size)?;
        let loss = model.loss(&input)?;
        let alpha = loss.value.alpha;
        let mut analytic = Vec::new();
        for g in &loss.grads {
            analytic.extend_from_slice(g);
        }
        let point = model.flatten_params();
        let mut probe = model.clone();
        let err = nn::gradcheck(
            move |p| {
                probe.load_flat_params(p).unwrap();
                probe.loss_value_alpha_frozen(&input, alpha).unwrap()
            },
            &point,
            &analytic,
            1e-5,
        )
        .map_err(numerical)?;
        rows.push(("tiny_model".to_string(), err, 1e-3));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("128x256").unwrap(), Dims::new(128, 256));
        assert_eq!(parse_dims("64X64").unwrap(), Dims::new(64, 64));
        assert!(parse_dims("128").is_err());
        assert!(parse_dims("0x64").is_err());
        assert!(parse_dims("axb").is_err());
    }

    #[test]
    fn error_model_parsing() {
        assert_eq!(
            parse_error_model("mu=4.13,sigma=1.71,seed=7").unwrap(),
            (4.13, 1.71, 7)
        );
        assert_eq!(
            parse_error_model("seed=1,mu=2,sigma=0").unwrap(),
            (2.0, 0.0, 1)
        );
        assert!(parse_error_model("mu=4.13,sigma=1.71").is_err());
        assert!(parse_error_model("garbage").is_err());
    }

    #[test]
    fn profile_parsing() {
        let p = parse_profile("0.2,0.45,0.7,1.0,0.05").unwrap();
        assert_eq!(p, ReflectivityProfile::default());
        assert!(parse_profile("1,2,3").is_err());
        // Ordering violation.
        assert!(parse_profile("0.5,0.45,0.7,1.0,0.05").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Validation(String::new()).exit_code(), 2);
        assert_eq!(CliError::Referential(String::new()).exit_code(), 3);
        assert_eq!(CliError::Numerical(String::new()).exit_code(), 4);
    }
}
