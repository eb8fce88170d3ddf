//! Feature-pyramid backbones over pillar pseudoimages.
//!
//! Three blocks downsample by 2 each, with `C`, `2C` and `4C` output
//! channels and 3, 5 and 5 stride-1 layers. Every block output is upsampled
//! to half the input resolution and `2C` channels by a transpose conv, and
//! the three maps are concatenated into `6C` channels. Every conv is
//! followed by batch normalization and ReLU.
//!
//! The dense baseline downsamples with 3×3 stride-2 convs. The sparse
//! backbone downsamples with 2×2 stride-2 sparse convs, runs the stride-1
//! layers as submanifold convs, normalizes stored sites only, and only
//! densifies for the final concatenation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conv::{
    bn_relu_dense, bn_relu_sparse, conv2d_dense, conv2d_sparse, conv2d_subm_with, conv2d_transpose_dense,
    conv2d_transpose_sparse, BatchNormParams, ConvKind, ConvLayerWeights, PairCount, Rulebook,
};
use crate::error::{Error, Result};
use crate::tensor::{density, to_dense, DensePseudoimage, SparsePseudoimage};

pub const LAYERS_PER_BLOCK: [usize; 3] = [3, 5, 5];
pub const UPSAMPLE_STRIDES: [usize; 3] = [1, 2, 4];
pub const WIDE_KERNEL: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub conv: ConvLayerWeights,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    /// 3×3 stride-2, dense baseline.
    pub down_dense: ConvLayerWeights,
    /// 2×2 stride-2, sparse backbone and twin.
    pub down_sparse: ConvLayerWeights,
    /// Shared by both downsample shapes.
    pub down_bn: BatchNormParams,
    pub layers: Vec<ConvBn>,
    /// 9×9 replacement for the first stride-1 layer (wide-conv ablation).
    pub wide_first: Option<ConvLayerWeights>,
    pub up: ConvBn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub channels: usize,
    pub blocks: Vec<BlockWeights>,
}

fn expect_conv(w: &ConvLayerWeights, what: &str, kind: ConvKind, k: usize, stride: usize, cin: usize, cout: usize) -> Result<()> {
    if w.kind() != kind || w.size() != k || w.stride() != stride || w.cin() != cin || w.cout() != cout {
        return Err(Error::shape(format!(
            "{what}: expected {k}x{k} stride-{stride} {cin}->{cout} {kind:?}, found {}x{} stride-{} {}->{} {:?}",
            w.size(),
            w.size(),
            w.stride(),
            w.cin(),
            w.cout(),
            w.kind()
        )));
    }
    Ok(())
}

fn expect_bn(bn: &BatchNormParams, what: &str, channels: usize) -> Result<()> {
    if bn.channels() != channels {
        return Err(Error::shape(format!("{what}: batchnorm over {} channels, expected {channels}", bn.channels())));
    }
    Ok(())
}

impl BackboneWeights {
    /// Width of block `k`'s output (0-based).
    pub fn block_channels(&self, k: usize) -> usize {
        self.channels << k
    }

    pub fn has_wide(&self) -> bool {
        self.blocks.iter().all(|b| b.wide_first.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 {
            return Err(Error::config("base channel width must be positive"));
        }
        if self.blocks.len() != 3 {
            return Err(Error::shape(format!("{} blocks, expected 3", self.blocks.len())));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            let cin = if k == 0 { c } else { self.block_channels(k - 1) };
            let cout = self.block_channels(k);
            let name = |s: &str| format!("block{} {s}", k + 1);
            expect_conv(&b.down_dense, &name("down_dense"), ConvKind::Standard, 3, 2, cin, cout)?;
            expect_conv(&b.down_sparse, &name("down_sparse"), ConvKind::Standard, 2, 2, cin, cout)?;
            expect_bn(&b.down_bn, &name("down_bn"), cout)?;
            if b.layers.len() != LAYERS_PER_BLOCK[k] {
                return Err(Error::shape(format!(
                    "block{} has {} stride-1 layers, expected {}",
                    k + 1,
                    b.layers.len(),
                    LAYERS_PER_BLOCK[k]
                )));
            }
            for (i, l) in b.layers.iter().enumerate() {
                expect_conv(&l.conv, &name(&format!("layer{i}")), ConvKind::Standard, 3, 1, cout, cout)?;
                expect_bn(&l.bn, &name(&format!("layer{i} bn")), cout)?;
            }
            if let Some(wide) = &b.wide_first {
                expect_conv(wide, &name("wide_first"), ConvKind::Standard, WIDE_KERNEL, 1, cout, cout)?;
            }
            let s = UPSAMPLE_STRIDES[k];
            expect_conv(&b.up.conv, &name("up"), ConvKind::Transpose, s, s, cout, 2 * c)?;
            expect_bn(&b.up.bn, &name("up bn"), 2 * c)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneVariant {
    DenseBaseline,
    Sparse,
    Sparse1Dense23,
    Sparse12Dense3,
    SparseWideconv,
    SparseDenseTwin,
}

impl BackboneVariant {
    pub const ALL: [BackboneVariant; 6] = [
        BackboneVariant::DenseBaseline,
        BackboneVariant::Sparse,
        BackboneVariant::Sparse1Dense23,
        BackboneVariant::Sparse12Dense3,
        BackboneVariant::SparseWideconv,
        BackboneVariant::SparseDenseTwin,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            BackboneVariant::DenseBaseline => "dense-baseline",
            BackboneVariant::Sparse => "sparse",
            BackboneVariant::Sparse1Dense23 => "sparse1-dense23",
            BackboneVariant::Sparse12Dense3 => "sparse12-dense3",
            BackboneVariant::SparseWideconv => "sparse-wideconv",
            BackboneVariant::SparseDenseTwin => "sparse-dense-twin",
        }
    }

    /// Number of leading blocks executed sparsely.
    pub fn sparse_blocks(self) -> usize {
        match self {
            BackboneVariant::DenseBaseline | BackboneVariant::SparseDenseTwin => 0,
            BackboneVariant::Sparse1Dense23 => 1,
            BackboneVariant::Sparse12Dense3 => 2,
            BackboneVariant::Sparse | BackboneVariant::SparseWideconv => 3,
        }
    }

    /// Whether the variant consumes the sparse pillar output directly.
    pub fn takes_sparse_input(self) -> bool {
        self.sparse_blocks() > 0
    }
}

impl fmt::Display for BackboneVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BackboneVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "dense" {
            return Ok(BackboneVariant::DenseBaseline);
        }
        BackboneVariant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown backbone variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub execution: Execution,
    pub count: PairCount,
}

/// Occupancy after a block's final ReLU, on that block's grid. For dense
/// blocks "sites" are cells with a non-zero channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSnapshot {
    pub block: usize,
    pub execution: Execution,
    pub grid: (usize, usize),
    /// Sites entering the block's downsample conv.
    pub sites_in: usize,
    /// Sites leaving the downsample conv.
    pub sites_downsampled: usize,
    pub sites: usize,
    pub site_density: f64,
    pub value_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockOutput {
    Dense(DensePseudoimage),
    Sparse(SparsePseudoimage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneRun {
    pub features: DensePseudoimage,
    pub stage_counts: Vec<StageCount>,
    pub snapshots: Vec<BlockSnapshot>,
    /// Per-block outputs (before upsampling), kept only when requested.
    pub block_outputs: Vec<BlockOutput>,
}

impl BackboneRun {
    /// Counts of the sparsely executed stages.
    pub fn sparse_counts(&self) -> Vec<PairCount> {
        self.stage_counts
            .iter()
            .filter(|s| s.execution == Execution::Sparse)
            .map(|s| s.count)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub keep_block_outputs: bool,
}

fn check_input(h: usize, w: usize, c: usize, weights: &BackboneWeights) -> Result<()> {
    weights.validate()?;
    Error::check_channels(weights.channels, c)?;
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::shape(format!("backbone input {h}x{w} must be non-empty and divisible by 8")));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Downsample {
    ThreeByThree,
    TwoByTwo,
}

struct Recorder {
    stage_counts: Vec<StageCount>,
    snapshots: Vec<BlockSnapshot>,
    block_outputs: Vec<BlockOutput>,
    keep: bool,
}

impl Recorder {
    fn new(opts: RunOptions) -> Self {
        Recorder { stage_counts: Vec::new(), snapshots: Vec::new(), block_outputs: Vec::new(), keep: opts.keep_block_outputs }
    }

    fn dense(&mut self, stage: String, w: &ConvLayerWeights, h: usize, wd: usize) -> Result<()> {
        let count = PairCount::dense(w, h, wd)?;
        self.stage_counts.push(StageCount { stage, execution: Execution::Dense, count });
        Ok(())
    }

    fn sparse(&mut self, stage: String, count: PairCount) {
        self.stage_counts.push(StageCount { stage, execution: Execution::Sparse, count });
    }

    fn finish(self, features: DensePseudoimage) -> BackboneRun {
        BackboneRun {
            features,
            stage_counts: self.stage_counts,
            snapshots: self.snapshots,
            block_outputs: self.block_outputs,
        }
    }
}

fn dense_block(
    x: &DensePseudoimage,
    k: usize,
    b: &BlockWeights,
    down: Downsample,
    rec: &mut Recorder,
) -> Result<DensePseudoimage> {
    let down_w = match down {
        Downsample::ThreeByThree => &b.down_dense,
        Downsample::TwoByTwo => &b.down_sparse,
    };
    let sites_in = x.nonzero_cells();
    rec.dense(format!("block{}.down", k + 1), down_w, x.height(), x.width())?;
    let mut y = bn_relu_dense(conv2d_dense(x, down_w)?, &b.down_bn)?;
    let sites_downsampled = y.nonzero_cells();
    for (i, layer) in b.layers.iter().enumerate() {
        rec.dense(format!("block{}.layer{i}", k + 1), &layer.conv, y.height(), y.width())?;
        y = bn_relu_dense(conv2d_dense(&y, &layer.conv)?, &layer.bn)?;
    }
    let sites = y.nonzero_cells();
    let area = (y.height() * y.width()) as f64;
    rec.snapshots.push(BlockSnapshot {
        block: k + 1,
        execution: Execution::Dense,
        grid: (y.height(), y.width()),
        sites_in,
        sites_downsampled,
        sites,
        site_density: sites as f64 / area,
        value_density: sites as f64 / area,
    });
    if rec.keep {
        rec.block_outputs.push(BlockOutput::Dense(y.clone()));
    }
    Ok(y)
}

fn dense_upsample(x: &DensePseudoimage, k: usize, b: &BlockWeights, rec: &mut Recorder) -> Result<DensePseudoimage> {
    rec.dense(format!("block{}.up", k + 1), &b.up.conv, x.height(), x.width())?;
    bn_relu_dense(conv2d_transpose_dense(x, &b.up.conv)?, &b.up.bn)
}

fn sparse_block(
    x: &SparsePseudoimage,
    k: usize,
    b: &BlockWeights,
    wide: bool,
    rec: &mut Recorder,
) -> Result<SparsePseudoimage> {
    let (y, count) = conv2d_sparse(x, &b.down_sparse)?;
    rec.sparse(format!("block{}.down", k + 1), count);
    let mut y = bn_relu_sparse(y, &b.down_bn)?;
    let sites_downsampled = y.nnz();

    // every stride-1 layer keeps the site set, so the rulebooks are built once
    let narrow = Rulebook::submanifold(&y, 3)?;
    let wide_rb = if wide { Some(Rulebook::submanifold(&y, WIDE_KERNEL)?) } else { None };
    for (i, layer) in b.layers.iter().enumerate() {
        let (conv, rulebook) = match (&wide_rb, i) {
            (Some(rb), 0) => {
                let w = b
                    .wide_first
                    .as_ref()
                    .ok_or_else(|| Error::config(format!("block{} has no 9x9 wide-conv weights", k + 1)))?;
                (w.with_kind(ConvKind::Submanifold)?, rb)
            }
            _ => (layer.conv.with_kind(ConvKind::Submanifold)?, &narrow),
        };
        let (z, count) = conv2d_subm_with(&y, &conv, rulebook)?;
        rec.sparse(format!("block{}.layer{i}", k + 1), count);
        y = bn_relu_sparse(z, &layer.bn)?;
    }
    let d = density(&y);
    rec.snapshots.push(BlockSnapshot {
        block: k + 1,
        execution: Execution::Sparse,
        grid: (y.height(), y.width()),
        sites_in: x.nnz(),
        sites_downsampled,
        sites: y.nnz(),
        site_density: d.site_density,
        value_density: d.value_density,
    });
    if rec.keep {
        rec.block_outputs.push(BlockOutput::Sparse(y.clone()));
    }
    Ok(y)
}

fn sparse_upsample(x: &SparsePseudoimage, k: usize, b: &BlockWeights, rec: &mut Recorder) -> Result<DensePseudoimage> {
    let (y, count) = conv2d_transpose_sparse(x, &b.up.conv)?;
    rec.sparse(format!("block{}.up", k + 1), count);
    Ok(to_dense(&bn_relu_sparse(y, &b.up.bn)?))
}

fn run_dense_pyramid(
    x: &DensePseudoimage,
    w: &BackboneWeights,
    down: Downsample,
    opts: RunOptions,
) -> Result<BackboneRun> {
    check_input(x.height(), x.width(), x.channels(), w)?;
    let mut rec = Recorder::new(opts);
    let mut ups = Vec::with_capacity(3);
    let mut cur = x.clone();
    for (k, b) in w.blocks.iter().enumerate() {
        cur = dense_block(&cur, k, b, down, &mut rec)?;
        ups.push(dense_upsample(&cur, k, b, &mut rec)?);
    }
    let features = DensePseudoimage::concat_channels(&ups.iter().collect::<Vec<_>>())?;
    Ok(rec.finish(features))
}

/// The dense baseline backbone.
pub fn run_dense_backbone(x: &DensePseudoimage, w: &BackboneWeights) -> Result<BackboneRun> {
    run_dense_backbone_with(x, w, RunOptions::default())
}

pub fn run_dense_backbone_with(x: &DensePseudoimage, w: &BackboneWeights, opts: RunOptions) -> Result<BackboneRun> {
    run_dense_pyramid(x, w, Downsample::ThreeByThree, opts)
}

/// The sparse architecture (2×2 downsampling, 3×3 stride-1 standard convs,
/// dense batch norm) executed on dense tensors. At full input density it
/// computes the same function as the sparse backbone.
pub fn run_sparse_dense_twin(x: &DensePseudoimage, w: &BackboneWeights) -> Result<BackboneRun> {
    run_dense_pyramid(x, w, Downsample::TwoByTwo, RunOptions::default())
}

pub fn run_sparse_backbone(x: &SparsePseudoimage, w: &BackboneWeights, variant: BackboneVariant) -> Result<BackboneRun> {
    run_sparse_backbone_with(x, w, variant, RunOptions::default())
}

/// Runs one of the sparse-input variants. Mixed variants densify after
/// their last sparse block and continue with the baseline's dense blocks.
pub fn run_sparse_backbone_with(
    x: &SparsePseudoimage,
    w: &BackboneWeights,
    variant: BackboneVariant,
    opts: RunOptions,
) -> Result<BackboneRun> {
    let n_sparse = variant.sparse_blocks();
    if n_sparse == 0 {
        return Err(Error::config(format!("{variant} does not take a sparse input")));
    }
    check_input(x.height(), x.width(), x.channels(), w)?;
    let wide = variant == BackboneVariant::SparseWideconv;
    if wide && !w.has_wide() {
        return Err(Error::config("wide-conv variant needs 9x9 weights in every block"));
    }
    let mut rec = Recorder::new(opts);
    let mut ups = Vec::with_capacity(3);
    let mut cur = x.clone();
    for (k, b) in w.blocks.iter().enumerate().take(n_sparse) {
        cur = sparse_block(&cur, k, b, wide, &mut rec)?;
        ups.push(sparse_upsample(&cur, k, b, &mut rec)?);
    }
    if n_sparse < 3 {
        let mut dense = to_dense(&cur);
        for (k, b) in w.blocks.iter().enumerate().skip(n_sparse) {
            dense = dense_block(&dense, k, b, Downsample::ThreeByThree, &mut rec)?;
            ups.push(dense_upsample(&dense, k, b, &mut rec)?);
        }
    }
    let features = DensePseudoimage::concat_channels(&ups.iter().collect::<Vec<_>>())?;
    Ok(rec.finish(features))
}

/// Per-cell linear map standing in for the detection head.
pub fn head_stub(features: &DensePseudoimage, head: &ConvLayerWeights) -> Result<DensePseudoimage> {
    if head.size() != 1 || head.stride() != 1 {
        return Err(Error::UnsupportedKernel(format!(
            "head must be 1x1 stride 1, found {}x{} stride {}",
            head.size(),
            head.size(),
            head.stride()
        )));
    }
    conv2d_dense(features, head)
}
