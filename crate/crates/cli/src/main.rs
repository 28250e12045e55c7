use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ctpipe_core::augment::{augment_pipeline, replay, AugmentParams, DrawLog};
use ctpipe_core::ingestion::{assemble_volume, dataset_stats, list_slices, load_manifest, DatasetStats};
use ctpipe_core::loss::{CategoryWeights, WeightScheme};
use ctpipe_core::metrics::{argmax, confusion, macro_f1};
use ctpipe_core::npy::{load_volume, save_volume};
use ctpipe_core::pipeline::{run_pipeline, PipelineConfig, StageOrder};
use ctpipe_core::resample::{normalize_unit, resize_trilinear};
use ctpipe_core::split_attention::{demo_case, split_attention_trace, FeatureMap, SplitAttnParams};
use ctpipe_core::trim::{apply_trim, detect_lung_range, TrimParams};
use ctpipe_core::{Category, Shape3, Split};

#[derive(Parser)]
#[command(name = "ctpipe", version, about = "Chest-CT volume preprocessing and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stack a directory of PNG slices into an NPY volume.
    Ingest(IngestArgs),
    /// Drop leading/trailing slices without lung tissue.
    Trim(TrimArgs),
    /// Trilinear resize to a fixed grid.
    Resize(ResizeArgs),
    /// Min-max normalize to [0, 1].
    Normalize(IoArgs),
    /// Apply seed-driven training augmentations.
    Augment(AugmentArgs),
    /// Run the full batch pipeline over a manifest.
    Pipeline(PipelineArgs),
    /// Print female/male counts per split and label.
    Stats(StatsArgs),
    /// Derive per-category loss weights from a manifest.
    Weights(WeightsArgs),
    /// Score predictions against manifest labels with macro F1.
    Eval(EvalArgs),
    /// Trace one split-attention forward pass at scalar scale.
    AttnDemo(AttnDemoArgs),
}

#[derive(Args)]
struct IoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of 8- or 16-bit grayscale PNG slices.
    #[arg(long)]
    slices: PathBuf,
    /// Defaults to the directory name.
    #[arg(long)]
    scan_id: Option<String>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrimArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, default_value_t = TrimParams::default().intensity_air_cutoff)]
    air_cutoff: f64,
    #[arg(long, default_value_t = TrimParams::default().air_fraction_threshold)]
    air_threshold: f64,
    #[arg(long, default_value_t = TrimParams::default().min_run)]
    min_run: usize,
    /// Also write `<output>.range.json` with the kept slice interval.
    #[arg(long)]
    emit_range: bool,
}

#[derive(Args)]
struct ResizeArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, default_value_t = 64)]
    depth: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "0.7,1.0")]
    crop_scale: (f64, f64),
    #[arg(long, default_value_t = 64)]
    depth: usize,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "-10,10")]
    rot_deg: (f64, f64),
    #[arg(long, default_value_t = 0.1)]
    brightness: f64,
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true, default_value = "0.9,1.1")]
    contrast: (f64, f64),
    /// Write the sampled draws as JSON.
    #[arg(long)]
    log_draws: Option<PathBuf>,
    /// Re-apply a previously logged set of draws instead of sampling.
    #[arg(long, conflicts_with = "log_draws")]
    replay: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    ResizeThenNormalize,
    NormalizeThenResize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    InverseFrequency,
    Uniform,
    Manual,
}

impl From<SchemeArg> for WeightScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::InverseFrequency => WeightScheme::InverseFrequency,
            SchemeArg::Uniform => WeightScheme::Uniform,
            SchemeArg::Manual => WeightScheme::Manual,
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON file mirroring the pipeline configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    air_cutoff: Option<f64>,
    #[arg(long)]
    air_threshold: Option<f64>,
    #[arg(long)]
    min_run: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    /// Append the augmentation stage.
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    epoch: Option<u64>,
    #[arg(long, value_enum)]
    weight_scheme: Option<SchemeArg>,
    #[arg(long, env = "CTPIPE_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Reference statistics (JSON) to compare against.
    #[arg(long)]
    expected: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "inverse-frequency")]
    scheme: SchemeArg,
    /// Comma-separated weights in A,G,Covid,Normal order (manual scheme).
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args)]
struct EvalArgs {
    /// `scan_id,predicted_label` or `scan_id,logit_A,logit_G,logit_Covid,logit_Normal`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct AttnDemoArgs {
    /// Parameters as JSON `{R, K, channels, W1, b1, W2, b2}`.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Optional JSON `[[...], ...]`: one channel vector per split (1×1×1 extent).
    #[arg(long)]
    splits: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<ExitCode> {
    let paths = list_slices(&args.slices)?;
    let volume = assemble_volume(&paths)?;
    let scan_id = args.scan_id.unwrap_or_else(|| {
        args.slices
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    save_volume(&args.output, &scan_id, &volume)?;
    log::info!("{scan_id}: {:?}", volume.shape().as_tuple());
    Ok(ExitCode::SUCCESS)
}

fn trim(args: TrimArgs) -> Result<ExitCode> {
    let params = TrimParams {
        air_fraction_threshold: args.air_threshold,
        intensity_air_cutoff: args.air_cutoff,
        min_run: args.min_run,
    };
    params.validate()?;
    let (volume, side) = load_volume(&args.io.input)?;
    let range = detect_lung_range(&volume, &params);
    save_volume(&args.io.output, &side.scan_id, &apply_trim(&volume, range)?)?;
    if args.emit_range {
        let path = args.io.output.with_extension("range.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&range)?)?;
    }
    log::info!("{}: kept slices {}..={}", side.scan_id, range.d_lo, range.d_hi);
    Ok(ExitCode::SUCCESS)
}

fn resize(args: ResizeArgs) -> Result<ExitCode> {
    let (volume, side) = load_volume(&args.io.input)?;
    let out = resize_trilinear(&volume, Shape3::new(args.depth, args.height, args.width))?;
    save_volume(&args.io.output, &side.scan_id, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn normalize(args: IoArgs) -> Result<ExitCode> {
    let (volume, side) = load_volume(&args.input)?;
    let (lo, hi) = volume.min_max();
    if hi <= lo {
        log::warn!("{}: constant volume, writing zeros", side.scan_id);
    }
    save_volume(&args.output, &side.scan_id, &normalize_unit(&volume))?;
    Ok(ExitCode::SUCCESS)
}

fn augment(args: AugmentArgs) -> Result<ExitCode> {
    let params = AugmentParams {
        crop_scale_range: args.crop_scale,
        depth_crop: args.depth,
        rotation_range_deg: args.rot_deg,
        brightness_delta_max: args.brightness,
        contrast_factor_range: args.contrast,
        seed: args.seed,
    };
    params.validate()?;
    let (volume, side) = load_volume(&args.io.input)?;
    if volume.domain() != ctpipe_core::IntensityDomain::Unit {
        bail!("augment expects a normalized (unit-domain) volume");
    }
    let out = match &args.replay {
        Some(path) => {
            let log: DrawLog = read_json(path)?;
            replay(&volume, &params, &log)
        }
        None => {
            let (out, log) = augment_pipeline(&volume, &params, &side.scan_id, args.epoch);
            if let Some(path) = &args.log_draws {
                std::fs::write(path, serde_json::to_vec_pretty(&log)?)?;
            }
            out
        }
    };
    save_volume(&args.io.output, &side.scan_id, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn pipeline(args: PipelineArgs) -> Result<ExitCode> {
    let mut config: PipelineConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.manifest {
        config.manifest = v;
    }
    if let Some(v) = args.output_dir {
        config.output_dir = v;
    }
    if let Some(v) = args.air_cutoff {
        config.trim.intensity_air_cutoff = v;
    }
    if let Some(v) = args.air_threshold {
        config.trim.air_fraction_threshold = v;
    }
    if let Some(v) = args.min_run {
        config.trim.min_run = v;
    }
    if let Some(v) = args.depth {
        config.target.depth = v;
    }
    if let Some(v) = args.height {
        config.target.height = v;
    }
    if let Some(v) = args.width {
        config.target.width = v;
    }
    if let Some(v) = args.order {
        config.order = match v {
            OrderArg::ResizeThenNormalize => StageOrder::ResizeThenNormalize,
            OrderArg::NormalizeThenResize => StageOrder::NormalizeThenResize,
        };
    }
    config.augment |= args.augment;
    if let Some(v) = args.epoch {
        config.epoch = v;
    }
    if let Some(v) = args.weight_scheme {
        config.weight_scheme = v.into();
    }
    if let Some(v) = args.workers {
        config.workers = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if config.manifest.as_os_str().is_empty() {
        bail!("no manifest given (use --manifest or a config file)");
    }

    let report = run_pipeline(&config)?;
    for s in report.scans.iter().filter(|s| s.error.is_some()) {
        eprintln!("failed {}: {}", s.scan_id, s.error.as_deref().unwrap_or_default());
    }
    println!(
        "{} scans, {} failed; report in {}",
        report.scans.len(),
        report.failed(),
        config.output_dir.join(ctpipe_core::pipeline::REPORT_FILE).display()
    );
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn stats(args: StatsArgs) -> Result<ExitCode> {
    let computed = dataset_stats(&load_manifest(&args.manifest)?);
    if args.json {
        print_json(&computed)?;
    } else {
        print!("{}", computed.to_table());
    }
    let Some(path) = args.expected else {
        return Ok(ExitCode::SUCCESS);
    };
    let expected: DatasetStats = read_json(&path)?;
    if !args.json {
        println!("\nexpected:");
        print!("{}", expected.to_table());
    }
    let diffs = computed.mismatches(&expected);
    if diffs.is_empty() {
        eprintln!("all cells match");
        Ok(ExitCode::SUCCESS)
    } else {
        for d in &diffs {
            eprintln!("mismatch: {d}");
        }
        Ok(ExitCode::from(2))
    }
}

#[derive(Serialize)]
struct WeightsOut<'a> {
    scheme: WeightScheme,
    categories: Vec<&'static str>,
    counts: Vec<u64>,
    weights: &'a [f64],
}

fn weights(args: WeightsArgs) -> Result<ExitCode> {
    let split: Split = args.split.parse().map_err(anyhow::Error::msg)?;
    let stats = dataset_stats(&load_manifest(&args.manifest)?);
    let counts: Vec<u64> = stats.label_counts(split).iter().map(|&n| n as u64).collect();
    let w = match args.scheme {
        SchemeArg::InverseFrequency => CategoryWeights::inverse_frequency(&counts)?,
        SchemeArg::Uniform => CategoryWeights::uniform(Category::COUNT),
        SchemeArg::Manual => {
            if args.weights.len() != Category::COUNT {
                bail!("manual scheme needs {} weights", Category::COUNT);
            }
            CategoryWeights::manual(args.weights)?
        }
    };
    print_json(&WeightsOut {
        scheme: w.scheme(),
        categories: Category::ALL.iter().map(|c| c.as_str()).collect(),
        counts,
        weights: w.weights(),
    })?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ConfusionOut {
    labels: Vec<&'static str>,
    counts: Vec<Vec<u64>>,
}

#[derive(Serialize)]
struct EvalOut {
    macro_f1: f64,
    per_category_f1: serde_json::Map<String, serde_json::Value>,
    confusion: ConfusionOut,
}

fn read_predictions(path: &Path) -> Result<Vec<(String, Category)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let logits_header = ["scan_id", "logit_A", "logit_G", "logit_Covid", "logit_Normal"];
    let by_label = header == ["scan_id", "predicted_label"];
    if !by_label && header != logits_header {
        bail!("unrecognised predictions header: {}", header.join(","));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec[0].trim().to_string();
        let pred = if by_label {
            rec[1].trim().parse::<Category>().map_err(anyhow::Error::msg)?
        } else {
            let z: Vec<f64> = (1..5)
                .map(|k| rec[k].trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("row {}", i + 1))?;
            Category::from_index(argmax(&z).expect("four logits")).expect("index < 4")
        };
        out.push((id, pred));
    }
    Ok(out)
}

fn eval(args: EvalArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&args.manifest)?;
    let preds = read_predictions(&args.predictions)?;
    let mut truth = Vec::with_capacity(preds.len());
    let mut pred = Vec::with_capacity(preds.len());
    for (id, p) in preds {
        let rec = manifest
            .get(&id)
            .with_context(|| format!("scan {id:?} not in manifest"))?;
        truth.push(rec.label);
        pred.push(p);
    }
    let cm = confusion(&truth, &pred)?;
    let f1 = macro_f1(&cm);
    print_json(&EvalOut {
        macro_f1: f1.macro_f1,
        per_category_f1: Category::ALL
            .iter()
            .map(|c| (c.to_string(), f1.per_category[c.index()].into()))
            .collect(),
        confusion: ConfusionOut {
            labels: Category::ALL.iter().map(|c| c.as_str()).collect(),
            counts: cm.rows(),
        },
    })?;
    Ok(ExitCode::SUCCESS)
}

fn attn_demo(args: AttnDemoArgs) -> Result<ExitCode> {
    let (demo_splits, demo_params) = demo_case();
    let params = match &args.params {
        Some(p) => read_json::<SplitAttnParams>(p)?,
        None => demo_params,
    };
    let splits = match &args.splits {
        Some(p) => read_json::<Vec<Vec<f64>>>(p)?
            .into_iter()
            .map(|v| FeatureMap::new(v.len(), (1, 1, 1), v))
            .collect::<Result<Vec<_>, _>>()?,
        None if args.params.is_none() => demo_splits,
        None => (0..params.radix)
            .map(|r| {
                FeatureMap::from_fn(params.channels, (1, 1, 1), |c, _| 1.0 + r as f64 + 0.5 * c as f64)
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    let t = split_attention_trace(&splits, &params)?;
    println!("R = {}, K = {}, channels = {}", params.radix, params.cardinality, params.channels);
    for (r, s) in splits.iter().enumerate() {
        println!("split[{r}]        = {:?}", s.data());
    }
    println!("(1) sum         = {:?}", t.summed.data());
    println!("(2) pooled      = {:?}", t.pooled);
    println!("(3) hidden      = {:?}", t.hidden);
    for (r, z) in t.logits.iter().enumerate() {
        println!("(3) logits[{r}]   = {z:?}");
    }
    for (r, a) in t.attention.iter().enumerate() {
        println!("(4) attention[{r}] = {a:?}");
    }
    println!("(5) output      = {:?}", t.output.data());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Trim(a) => trim(a),
        Command::Resize(a) => resize(a),
        Command::Normalize(a) => normalize(a),
        Command::Augment(a) => augment(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Stats(a) => stats(a),
        Command::Weights(a) => weights(a),
        Command::Eval(a) => eval(a),
        Command::AttnDemo(a) => attn_demo(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
