//! Manifest-driven batch preprocessing: assemble → trim → resize →
//! normalize (→ augment), one NPY + sidecar pair per scan.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pipeline, AugmentParams, DrawLog};
use crate::error::{Error, Result};
use crate::ingestion::{assemble_volume, dataset_stats, list_slices, load_manifest, DatasetStats, ScanRecord};
use crate::loss::WeightScheme;
use crate::npy::save_volume;
use crate::resample::{normalize_unit, resize_trilinear, DEFAULT_TARGET};
use crate::trim::{apply_trim, detect_lung_range, TrimParams, TrimRange};
use crate::volume::{Shape3, Volume};

/// Order of the resize and normalize stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    #[default]
    ResizeThenNormalize,
    NormalizeThenResize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub trim: TrimParams,
    pub target: Shape3,
    pub order: StageOrder,
    pub augment: bool,
    pub augment_params: AugmentParams,
    pub epoch: u64,
    pub weight_scheme: WeightScheme,
    pub workers: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            trim: TrimParams::default(),
            target: DEFAULT_TARGET,
            order: StageOrder::default(),
            augment: false,
            augment_params: AugmentParams::default(),
            epoch: 0,
            weight_scheme: WeightScheme::InverseFrequency,
            workers: 1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidParams("workers must be >= 1".into()));
        }
        let t = self.target;
        if t.depth == 0 || t.height == 0 || t.width == 0 {
            return Err(Error::InvalidTarget(t.as_tuple()));
        }
        self.trim.validate()?;
        if self.augment {
            self.augment_params.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanStatus {
    Ok,
    Failed,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub assemble: f64,
    pub trim: f64,
    pub resize: f64,
    pub normalize: f64,
    pub augment: f64,
    pub write: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub scan_id: String,
    pub status: ScanStatus,
    pub error: Option<String>,
    pub trim_range: Option<TrimRange>,
    pub output: Option<PathBuf>,
    pub draws: Option<DrawLog>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scans: Vec<ScanReport>,
    pub stats: DatasetStats,
}

impl RunReport {
    pub fn failed(&self) -> usize {
        self.scans
            .iter()
            .filter(|s| s.status == ScanStatus::Failed)
            .count()
    }

    /// 0 when every scan succeeded, 2 on partial failure.
    pub fn exit_code(&self) -> i32 {
        if self.failed() == 0 {
            0
        } else {
            2
        }
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot = start.elapsed().as_secs_f64();
    out
}

/// Runs the in-memory stages on one volume: trim, then resize and normalize
/// in the configured order.
pub fn preprocess_volume(
    volume: &Volume,
    trim: &TrimParams,
    target: Shape3,
    order: StageOrder,
    timings: &mut StageTimings,
) -> Result<(Volume, TrimRange)> {
    let range = timed(&mut timings.trim, || detect_lung_range(volume, trim));
    let trimmed = apply_trim(volume, range)?;
    let out = match order {
        StageOrder::ResizeThenNormalize => {
            let r = timed(&mut timings.resize, || resize_trilinear(&trimmed, target))?;
            timed(&mut timings.normalize, || normalize_unit(&r))
        }
        StageOrder::NormalizeThenResize => {
            let n = timed(&mut timings.normalize, || normalize_unit(&trimmed));
            timed(&mut timings.resize, || resize_trilinear(&n, target))?
        }
    };
    Ok((out, range))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn process_scan(record: &ScanRecord, base: &Path, config: &PipelineConfig) -> ScanReport {
    let mut timings = StageTimings::default();
    let mut trim_range = None;
    let mut draws = None;
    let result = (|| -> Result<PathBuf> {
        let dir = resolve(base, &record.path);
        let volume = timed(&mut timings.assemble, || {
            list_slices(&dir).and_then(|paths| assemble_volume(&paths))
        })?;
        let (mut out, range) =
            preprocess_volume(&volume, &config.trim, config.target, config.order, &mut timings)?;
        trim_range = Some(range);
        if config.augment {
            let params = AugmentParams {
                seed: config.seed,
                ..config.augment_params
            };
            let (aug, log) = timed(&mut timings.augment, || {
                augment_pipeline(&out, &params, &record.scan_id, config.epoch)
            });
            out = aug;
            draws = Some(log);
        }
        let path = config.output_dir.join(format!("{}.npy", record.scan_id));
        timed(&mut timings.write, || save_volume(&path, &record.scan_id, &out))?;
        Ok(path)
    })();
    match result {
        Ok(path) => ScanReport {
            scan_id: record.scan_id.clone(),
            status: ScanStatus::Ok,
            error: None,
            trim_range,
            output: Some(path),
            draws,
            timings,
        },
        Err(e) => {
            log::error!("scan {}: {e}", record.scan_id);
            ScanReport {
                scan_id: record.scan_id.clone(),
                status: ScanStatus::Failed,
                error: Some(e.to_string()),
                trim_range,
                output: None,
                draws,
                timings,
            }
        }
    }
}

pub const REPORT_FILE: &str = "report.json";

/// Processes every manifest record on `config.workers` threads. Per-scan
/// failures are recorded in the report; only configuration, manifest or
/// output-directory problems are returned as errors.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let manifest = load_manifest(&config.manifest)?;
    let base = config
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    std::fs::create_dir_all(&config.output_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let scans: Vec<ScanReport> = pool.install(|| {
        manifest
            .records()
            .par_iter()
            .map(|r| process_scan(r, &base, config))
            .collect()
    });

    let report = RunReport {
        scans,
        stats: dataset_stats(&manifest),
    };
    std::fs::write(
        config.output_dir.join(REPORT_FILE),
        serde_json::to_vec_pretty(&report)?,
    )?;
    Ok(report)
}
