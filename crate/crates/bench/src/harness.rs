//! Per-stage timing of the pillar pipeline.
//!
//! Every variant sees the same weights object and the same scenes in the
//! same order. Each timed pass runs feature net → backbone → head on one
//! scene; one repetition is a pass over every scene. Warmup passes run the
//! first scene untimed before each variant's repetitions.

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use spp_core::backbone::{
    head_stub, run_dense_backbone, run_sparse_backbone, run_sparse_dense_twin, BackboneRun, BackboneVariant,
    BlockSnapshot, StageCount,
};
use spp_core::costmodel::{analytic_baseline, analytic_sparse_bound, order_stats, reconcile, OpCountReport, Reconciliation};
use spp_core::pillars::{pillarize, read_point_cloud, scatter, vectorize, CloudFormat, PillarGridConfig, PointCloud};
use spp_core::tensor::{density, SparsePseudoimage};

use crate::error::{BenchError, Result};
use crate::synthetic::{gen_synthetic_scene, SyntheticSceneParams};
use crate::weights::ModelWeights;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThreadPolicy {
    Single,
    Unrestricted,
}

impl ThreadPolicy {
    /// `SPP_DETERMINISTIC=1` overrides the requested policy.
    pub fn from_env(requested: ThreadPolicy) -> ThreadPolicy {
        match std::env::var("SPP_DETERMINISTIC") {
            Ok(v) if v == "1" => ThreadPolicy::Single,
            _ => requested,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ThreadPolicy::Single => "single",
            ThreadPolicy::Unrestricted => "unrestricted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Synthetic { count: usize, params: SyntheticSceneParams, seed: u64 },
    Files { dir: PathBuf, format: CloudFormat },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub grid: PillarGridConfig,
    pub variants: Vec<BackboneVariant>,
    pub source: SceneSource,
    pub repetitions: usize,
    pub warmup: usize,
    pub threads: ThreadPolicy,
    /// Seed for pillar subsampling; scene `i` uses `seed + i`.
    pub seed: u64,
    pub out_json: Option<PathBuf>,
    pub out_csv: Option<PathBuf>,
}

impl BenchConfig {
    pub fn channels(&self) -> usize {
        self.grid.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(BenchError::Config("repetitions must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(BenchError::Config("no backbone variant selected".into()));
        }
        self.grid.validate()?;
        if let SceneSource::Synthetic { params, .. } = &self.source {
            params.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FeatureNet,
    Backbone,
    Head,
    Total,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::FeatureNet, Stage::Backbone, Stage::Head, Stage::Total];

    pub fn name(self) -> &'static str {
        match self {
            Stage::FeatureNet => "feature_net",
            Stage::Backbone => "backbone",
            Stage::Head => "head",
            Stage::Total => "total",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub mean_ms: f64,
    /// Sample standard deviation; zero for a single sample.
    pub stddev_ms: f64,
    /// Repetition-major, scene-minor.
    pub samples_ms: Vec<f64>,
}

impl StageTiming {
    pub fn from_samples(stage: Stage, samples_ms: Vec<f64>) -> Self {
        let n = samples_ms.len();
        let mean = if n == 0 { 0.0 } else { samples_ms.iter().sum::<f64>() / n as f64 };
        let var = if n < 2 { 0.0 } else { samples_ms.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64 };
        StageTiming { stage, mean_ms: mean, stddev_ms: var.sqrt(), samples_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene: usize,
    pub label: String,
    pub points: usize,
    pub pillars: usize,
    pub site_density: f64,
    pub value_density: f64,
    /// Baseline counts for dense variants, the sparse bound at this scene's
    /// site density otherwise.
    pub analytic: OpCountReport,
    pub stage_counts: Vec<StageCount>,
    /// Sparse-input variants reconcile only their sparsely executed stages.
    pub reconciliation: Reconciliation,
    pub snapshots: Vec<BlockSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: BackboneVariant,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub threads: ThreadPolicy,
    pub thread_count: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub median_site_density: f64,
    pub stages: Vec<StageTiming>,
    pub scenes: Vec<SceneRecord>,
}

impl VariantReport {
    pub fn stage(&self, stage: Stage) -> &StageTiming {
        self.stages.iter().find(|s| s.stage == stage).expect("every stage is timed")
    }

    pub fn violations(&self) -> usize {
        self.scenes.iter().map(|s| s.reconciliation.violations).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub variants: Vec<VariantReport>,
}

impl BenchReport {
    pub fn empty() -> Self {
        BenchReport { schema_version: SCHEMA_VERSION, variants: Vec::new() }
    }

    pub fn violations(&self) -> usize {
        self.variants.iter().map(VariantReport::violations).sum()
    }

    /// The report with every wall-clock field zeroed.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for v in &mut r.variants {
            for s in &mut v.stages {
                s.mean_ms = 0.0;
                s.stddev_ms = 0.0;
                s.samples_ms.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub label: String,
    pub cloud: PointCloud,
}

pub fn load_scenes(source: &SceneSource, grid: &PillarGridConfig) -> Result<Vec<Scene>> {
    match source {
        SceneSource::Synthetic { count, params, seed } => (0..*count)
            .map(|i| {
                let cloud = gen_synthetic_scene(params, grid, seed.wrapping_add(i as u64))?;
                Ok(Scene { label: format!("synthetic-{i}"), cloud })
            })
            .collect(),
        SceneSource::Files { dir, format } => {
            let ext = match format {
                CloudFormat::KittiBin => "bin",
                CloudFormat::Csv => "csv",
            };
            let entries = fs::read_dir(dir).map_err(|e| BenchError::io(dir, e))?;
            let mut paths = Vec::new();
            for entry in entries {
                let path = entry.map_err(|e| BenchError::io(dir, e))?.path();
                if path.is_file() && path.extension().is_some_and(|x| x == ext) {
                    paths.push(path);
                }
            }
            paths.sort();
            if paths.is_empty() {
                return Err(BenchError::Config(format!("no .{ext} scenes in {}", dir.display())));
            }
            paths
                .into_iter()
                .map(|path| {
                    let bytes = fs::read(&path).map_err(|e| BenchError::io(&path, e))?;
                    let cloud = read_point_cloud(&bytes, *format).map_err(|e| BenchError::format(&path, e.to_string()))?;
                    let label = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok(Scene { label, cloud })
                })
                .collect()
        }
    }
}

struct Pass {
    timings: [f64; 4],
    input: SparsePseudoimage,
    run: BackboneRun,
}

fn millis(d: Duration) -> f64 {
    d.as_micros() as f64 / 1000.0
}

fn run_pass(variant: BackboneVariant, scene: &Scene, grid: &PillarGridConfig, w: &ModelWeights, seed: u64) -> Result<Pass> {
    let t0 = Instant::now();
    let pillars = pillarize(&scene.cloud, grid, seed)?;
    let sparse = vectorize(&pillars, &w.vectorizer, grid)?;
    let dense = (!variant.takes_sparse_input()).then(|| scatter(&sparse));
    let t1 = Instant::now();
    let run = match (variant, &dense) {
        (BackboneVariant::DenseBaseline, Some(d)) => run_dense_backbone(d, &w.backbone)?,
        (BackboneVariant::SparseDenseTwin, Some(d)) => run_sparse_dense_twin(d, &w.backbone)?,
        (v, _) => run_sparse_backbone(&sparse, &w.backbone, v)?,
    };
    let t2 = Instant::now();
    let out = head_stub(&run.features, &w.head)?;
    let t3 = Instant::now();
    std::hint::black_box(&out);
    let timings = [millis(t1 - t0), millis(t2 - t1), millis(t3 - t2), millis(t3 - t0)];
    Ok(Pass { timings, input: sparse, run })
}

fn scene_record(variant: BackboneVariant, i: usize, scene: &Scene, grid: &PillarGridConfig, pass: &Pass) -> Result<SceneRecord> {
    let (h, w, c) = (grid.height(), grid.width(), grid.out_channels);
    let d = density(&pass.input);
    let (analytic, empirical) = match variant {
        BackboneVariant::DenseBaseline => {
            (analytic_baseline(h, w, c)?, pass.run.stage_counts.iter().map(|s| s.count).collect::<Vec<_>>())
        }
        BackboneVariant::SparseDenseTwin => {
            (analytic_sparse_bound(h, w, c, 1.0)?, pass.run.stage_counts.iter().map(|s| s.count).collect())
        }
        _ => (analytic_sparse_bound(h, w, c, d.site_density)?, pass.run.sparse_counts()),
    };
    Ok(SceneRecord {
        scene: i,
        label: scene.label.clone(),
        points: scene.cloud.len(),
        pillars: pass.input.nnz(),
        site_density: d.site_density,
        value_density: d.value_density,
        analytic,
        reconciliation: reconcile(&empirical, &analytic)?,
        stage_counts: pass.run.stage_counts.clone(),
        snapshots: pass.run.snapshots.clone(),
    })
}

fn run_variant(
    cfg: &BenchConfig,
    w: &ModelWeights,
    scenes: &[Scene],
    variant: BackboneVariant,
    thread_count: usize,
) -> Result<VariantReport> {
    if let Some(first) = scenes.first() {
        for _ in 0..cfg.warmup {
            run_pass(variant, first, &cfg.grid, w, cfg.seed)?;
        }
    }
    let mut samples: [Vec<f64>; 4] = Default::default();
    let mut records = Vec::with_capacity(scenes.len());
    for rep in 0..cfg.repetitions {
        for (i, scene) in scenes.iter().enumerate() {
            let pass = run_pass(variant, scene, &cfg.grid, w, cfg.seed.wrapping_add(i as u64))?;
            for (s, t) in samples.iter_mut().zip(pass.timings) {
                s.push(t);
            }
            if rep == 0 {
                records.push(scene_record(variant, i, scene, &cfg.grid, &pass)?);
            }
        }
    }
    let densities: Vec<f64> = records.iter().map(|r| r.site_density).collect();
    let median_site_density = if densities.is_empty() { 0.0 } else { order_stats(&densities)?.median };
    let stages = Stage::ALL.into_iter().zip(samples).map(|(st, s)| StageTiming::from_samples(st, s)).collect();
    Ok(VariantReport {
        variant,
        height: cfg.grid.height(),
        width: cfg.grid.width(),
        channels: cfg.channels(),
        threads: cfg.threads,
        thread_count,
        repetitions: cfg.repetitions,
        warmup: cfg.warmup,
        median_site_density,
        stages,
        scenes: records,
    })
}

/// Runs every configured variant over the same scenes under the configured
/// thread policy.
pub fn run_benchmark(cfg: &BenchConfig, weights: &ModelWeights) -> Result<BenchReport> {
    cfg.validate()?;
    if weights.channels() != cfg.channels() {
        return Err(BenchError::Config(format!(
            "weights have {} base channels, configuration asks for {}",
            weights.channels(),
            cfg.channels()
        )));
    }
    if cfg.variants.contains(&BackboneVariant::SparseWideconv) && !weights.backbone.has_wide() {
        return Err(BenchError::Config("sparse-wideconv needs 9x9 kernels in the weights file".into()));
    }
    let scenes = load_scenes(&cfg.source, &cfg.grid)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.threads == ThreadPolicy::Single {
        builder = builder.num_threads(1);
    }
    let pool = builder.build().map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let thread_count = pool.current_num_threads();
    pool.install(|| {
        let variants = cfg
            .variants
            .iter()
            .map(|&v| run_variant(cfg, weights, &scenes, v, thread_count))
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchReport { schema_version: SCHEMA_VERSION, variants })
    })
}
