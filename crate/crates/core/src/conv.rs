//! Convolution and normalization primitives over dense and sparse
//! pseudoimages.
//!
//! Kernels are stored `kh × kw × cin × cout` row-major so that one tap's
//! `cin × cout` matrix is contiguous and the innermost loop is an axpy over
//! output channels. No convolution carries a bias.
//!
//! Sparse forward convolutions are evaluated output-centrically through a
//! [`Rulebook`]: for every active output site and every kernel tap, the index
//! of the contributing input site (or none). Each output site is computed
//! independently in a fixed tap order, so results do not depend on how the
//! work is split across threads.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Coord, DensePseudoimage, SparsePseudoimage};

const SUPPORTED_SIZES: [usize; 5] = [1, 2, 3, 4, 9];
const NO_SITE: u32 = u32::MAX;
const SITE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvKind {
    Standard,
    Submanifold,
    Transpose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    data: Vec<f32>,
}

impl Kernel {
    pub fn new(kh: usize, kw: usize, cin: usize, cout: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != kh * kw * cin * cout {
            return Err(Error::malformed(format!(
                "kernel {kh}x{kw}x{cin}x{cout} given {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::malformed("non-finite kernel value"));
        }
        Ok(Kernel { kh, kw, cin, cout, data })
    }

    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        Kernel { kh, kw, cin, cout, data: vec![0.0; kh * kw * cin * cout] }
    }

    /// `δ_io` on the centre tap of an odd kernel, or on every tap of an even
    /// one (the latter is the identity block-copy for transpose kernels).
    pub fn identity(k: usize, channels: usize) -> Self {
        let mut kernel = Kernel::zeros(k, k, channels, channels);
        let taps: Vec<(usize, usize)> = if k % 2 == 1 {
            vec![(k / 2, k / 2)]
        } else {
            (0..k).flat_map(|r| (0..k).map(move |c| (r, c))).collect()
        };
        for (r, c) in taps {
            let base = (r * k + c) * channels * channels;
            for i in 0..channels {
                kernel.data[base + i * channels + i] = 1.0;
            }
        }
        kernel
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn cin(&self) -> usize {
        self.cin
    }

    pub fn cout(&self) -> usize {
        self.cout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The `cin × cout` matrix of tap `(dr, dc)`.
    #[inline]
    pub fn tap(&self, dr: usize, dc: usize) -> &[f32] {
        let size = self.cin * self.cout;
        let start = (dr * self.kw + dc) * size;
        &self.data[start..start + size]
    }

    #[inline]
    fn tap_index(&self, t: usize) -> &[f32] {
        let size = self.cin * self.cout;
        &self.data[t * size..(t + 1) * size]
    }
}

/// A kernel tensor plus how it is applied. The tensor is shared, so the same
/// weights can be viewed as a standard or a submanifold convolution without
/// copying.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerWeights {
    kernel: Arc<Kernel>,
    stride: usize,
    kind: ConvKind,
}

impl ConvLayerWeights {
    pub fn new(kernel: Kernel, stride: usize, kind: ConvKind) -> Result<Self> {
        Self::from_shared(Arc::new(kernel), stride, kind)
    }

    pub fn from_shared(kernel: Arc<Kernel>, stride: usize, kind: ConvKind) -> Result<Self> {
        let (kh, kw) = (kernel.kh, kernel.kw);
        if !SUPPORTED_SIZES.contains(&kh) || kh != kw {
            return Err(Error::UnsupportedKernel(format!("{kh}x{kw} kernel")));
        }
        if stride == 0 {
            return Err(Error::UnsupportedKernel("stride 0".into()));
        }
        let ok = match kind {
            ConvKind::Standard => (kh % 2 == 1 && stride <= 2) || stride == kh,
            ConvKind::Submanifold => kh % 2 == 1 && stride == 1,
            ConvKind::Transpose => matches!((kh, stride), (1, 1) | (2, 2) | (4, 4)),
        };
        if !ok {
            return Err(Error::UnsupportedKernel(format!(
                "{kh}x{kw} stride-{stride} {kind:?} convolution"
            )));
        }
        Ok(ConvLayerWeights { kernel, stride, kind })
    }

    /// Same tensor, applied as `kind`.
    pub fn with_kind(&self, kind: ConvKind) -> Result<Self> {
        Self::from_shared(Arc::clone(&self.kernel), self.stride, kind)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn shared_kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn kind(&self) -> ConvKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.kernel.kh
    }

    pub fn cin(&self) -> usize {
        self.kernel.cin
    }

    pub fn cout(&self) -> usize {
        self.kernel.cout
    }

    fn expect_kind(&self, kind: ConvKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::UnsupportedKernel(format!(
                "{:?} weights passed to a {kind:?} kernel",
                self.kind
            )))
        }
    }
}

/// Output grid and padding of a forward (standard or submanifold) conv.
///
/// Odd kernels use `(k-1)/2` zero padding, so 3×3 stride 1 preserves the
/// shape and 3×3 stride 2 yields `ceil(H/2) × ceil(W/2)`. Even kernels have
/// stride equal to their size, no padding, and need an exactly divisible grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardGeometry {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ForwardGeometry {
    pub fn new(k: usize, stride: usize, in_h: usize, in_w: usize) -> Result<Self> {
        if k % 2 == 1 {
            let pad = (k - 1) / 2;
            let out = |n: usize| if n == 0 { 0 } else { (n + 2 * pad - k) / stride + 1 };
            Ok(ForwardGeometry { k, stride, pad, in_h, in_w, out_h: out(in_h), out_w: out(in_w) })
        } else {
            if in_h % stride != 0 || in_w % stride != 0 {
                return Err(Error::shape(format!(
                    "{in_h}x{in_w} grid not divisible by stride {stride}"
                )));
            }
            Ok(ForwardGeometry {
                k,
                stride,
                pad: 0,
                in_h,
                in_w,
                out_h: in_h / stride,
                out_w: in_w / stride,
            })
        }
    }

    /// Input cell read by output `(orow, ocol)` through tap `(dr, dc)`.
    #[inline]
    fn source(&self, orow: usize, ocol: usize, dr: usize, dc: usize) -> Option<(usize, usize)> {
        let r = (orow * self.stride + dr).checked_sub(self.pad)?;
        let c = (ocol * self.stride + dc).checked_sub(self.pad)?;
        (r < self.in_h && c < self.in_w).then_some((r, c))
    }

    /// Output cell fed by input `(row, col)` through tap `(dr, dc)`.
    #[inline]
    fn target(&self, row: usize, col: usize, dr: usize, dc: usize) -> Option<(usize, usize)> {
        let r = (row + self.pad).checked_sub(dr)?;
        let c = (col + self.pad).checked_sub(dc)?;
        if r % self.stride != 0 || c % self.stride != 0 {
            return None;
        }
        let (r, c) = (r / self.stride, c / self.stride);
        (r < self.out_h && c < self.out_w).then_some((r, c))
    }
}

/// Work recorded by one sparse kernel invocation.
///
/// `incidences` is the number of (input site, kernel tap) products actually
/// evaluated. `pairs` is the charged count used for cost accounting: padded
/// odd kernels (3×3, 9×9) are charged a full `kh·kw` application per active
/// output site, every other kernel is charged its incidences. `weighted` is
/// `pairs · cin · cout / (kh · kw)`, the work in units of one full kernel
/// application at unit channel width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub kind: ConvKind,
    pub kernel_shape: (usize, usize),
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
    pub input_grid: (usize, usize),
    pub pairs: u64,
    pub incidences: u64,
    pub weighted: f64,
}

impl PairCount {
    fn new(w: &ConvLayerWeights, input_grid: (usize, usize), pairs: u64, incidences: u64) -> Self {
        let taps = (w.size() * w.size()) as f64;
        PairCount {
            kind: w.kind,
            kernel_shape: (w.size(), w.size()),
            stride: w.stride,
            cin: w.cin(),
            cout: w.cout(),
            input_grid,
            pairs,
            incidences,
            weighted: pairs as f64 * (w.cin() * w.cout()) as f64 / taps,
        }
    }

    /// Count for the same layer run densely on an `h × w` grid. Forward
    /// convs charge one application per output cell, transpose convs one per
    /// input cell.
    pub fn dense(w: &ConvLayerWeights, h: usize, wd: usize) -> Result<Self> {
        let taps = (w.size() * w.size()) as u64;
        let cells = match w.kind {
            ConvKind::Transpose => (h * wd) as u64,
            _ => {
                let g = ForwardGeometry::new(w.size(), w.stride, h, wd)?;
                (g.out_h * g.out_w) as u64
            }
        };
        Ok(PairCount::new(w, (h, wd), cells * taps, cells * taps))
    }
}

#[inline(always)]
fn axpy(acc: &mut [f32], a: f32, x: &[f32]) {
    for (o, &k) in acc.iter_mut().zip(x) {
        *o += a * k;
    }
}

/// `acc += v · M` for a row vector `v` and a `v.len() × acc.len()` matrix.
#[inline(always)]
fn vecmat_acc(acc: &mut [f32], v: &[f32], m: &[f32]) {
    let cout = acc.len();
    for (i, &a) in v.iter().enumerate() {
        axpy(acc, a, &m[i * cout..(i + 1) * cout]);
    }
}

pub fn conv2d_dense(x: &DensePseudoimage, w: &ConvLayerWeights) -> Result<DensePseudoimage> {
    w.expect_kind(ConvKind::Standard)?;
    Error::check_channels(w.cin(), x.channels())?;
    let g = ForwardGeometry::new(w.size(), w.stride, x.height(), x.width())?;
    let kernel = w.kernel();
    let cout = kernel.cout;
    let mut out = vec![0.0f32; g.out_h * g.out_w * cout];
    if !out.is_empty() {
        out.par_chunks_mut(g.out_w * cout).enumerate().for_each(|(orow, row_out)| {
            for (ocol, acc) in row_out.chunks_exact_mut(cout).enumerate() {
                for dr in 0..g.k {
                    for dc in 0..g.k {
                        if let Some((r, c)) = g.source(orow, ocol, dr, dc) {
                            vecmat_acc(acc, x.cell(r, c), kernel.tap(dr, dc));
                        }
                    }
                }
            }
        });
    }
    Ok(DensePseudoimage::from_raw(g.out_h, g.out_w, cout, out))
}

/// Dense row-major map from grid cell to stored-site index.
#[derive(Debug, Clone)]
pub struct SiteIndex {
    height: usize,
    width: usize,
    slots: Vec<u32>,
}

impl SiteIndex {
    pub fn new(s: &SparsePseudoimage) -> Self {
        let mut slots = vec![NO_SITE; s.height() * s.width()];
        for (i, c) in s.coords().iter().enumerate() {
            slots[c.row as usize * s.width() + c.col as usize] = i as u32;
        }
        SiteIndex { height: s.height(), width: s.width(), slots }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.height || col >= self.width {
            return None;
        }
        match self.slots[row * self.width + col] {
            NO_SITE => None,
            i => Some(i as usize),
        }
    }
}

/// Neighbour table of a sparse forward convolution: for every active output
/// site, the input site read by each kernel tap.
#[derive(Debug, Clone)]
pub struct Rulebook {
    geometry: ForwardGeometry,
    out_coords: Vec<Coord>,
    neighbors: Vec<u32>,
    incidences: u64,
}

impl Rulebook {
    fn build(x: &SparsePseudoimage, index: &SiteIndex, g: ForwardGeometry, out_coords: Vec<Coord>) -> Self {
        let taps = g.k * g.k;
        let mut neighbors = vec![NO_SITE; out_coords.len() * taps];
        let mut incidences = 0u64;
        for (o, oc) in out_coords.iter().enumerate() {
            let row = &mut neighbors[o * taps..(o + 1) * taps];
            for dr in 0..g.k {
                for dc in 0..g.k {
                    let hit = g
                        .source(oc.row as usize, oc.col as usize, dr, dc)
                        .and_then(|(r, c)| index.get(r, c));
                    if let Some(j) = hit {
                        row[dr * g.k + dc] = j as u32;
                        incidences += 1;
                    }
                }
            }
        }
        debug_assert_eq!(index.height, x.height());
        Rulebook { geometry: g, out_coords, neighbors, incidences }
    }

    /// Rulebook for a submanifold conv of size `k`: outputs are the active
    /// input sites. Reusable by every submanifold layer over the same sites.
    pub fn submanifold(x: &SparsePseudoimage, k: usize) -> Result<Self> {
        if k % 2 == 0 || !SUPPORTED_SIZES.contains(&k) {
            return Err(Error::UnsupportedKernel(format!("{k}x{k} submanifold kernel")));
        }
        let g = ForwardGeometry::new(k, 1, x.height(), x.width())?;
        Ok(Self::build(x, &SiteIndex::new(x), g, x.coords().to_vec()))
    }

    /// Rulebook for a standard sparse conv: outputs are every site whose
    /// receptive field holds at least one active input.
    pub fn standard(x: &SparsePseudoimage, k: usize, stride: usize) -> Result<Self> {
        let g = ForwardGeometry::new(k, stride, x.height(), x.width())?;
        let mut active = vec![false; g.out_h * g.out_w];
        for c in x.coords() {
            for dr in 0..k {
                for dc in 0..k {
                    if let Some((r, oc)) = g.target(c.row as usize, c.col as usize, dr, dc) {
                        active[r * g.out_w + oc] = true;
                    }
                }
            }
        }
        let out_coords = active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(i, _)| Coord::new((i / g.out_w) as u32, (i % g.out_w) as u32))
            .collect();
        Ok(Self::build(x, &SiteIndex::new(x), g, out_coords))
    }

    pub fn out_coords(&self) -> &[Coord] {
        &self.out_coords
    }

    pub fn incidences(&self) -> u64 {
        self.incidences
    }

    fn charged_pairs(&self) -> u64 {
        if self.geometry.pad > 0 {
            (self.out_coords.len() * self.geometry.k * self.geometry.k) as u64
        } else {
            self.incidences
        }
    }

    fn apply(&self, x: &SparsePseudoimage, w: &ConvLayerWeights) -> Result<(SparsePseudoimage, PairCount)> {
        Error::check_channels(w.cin(), x.channels())?;
        if w.size() != self.geometry.k || w.stride != self.geometry.stride {
            return Err(Error::shape(format!(
                "{}x{} stride-{} weights against a {}x{} stride-{} rulebook",
                w.size(),
                w.size(),
                w.stride,
                self.geometry.k,
                self.geometry.k,
                self.geometry.stride
            )));
        }
        if x.height() != self.geometry.in_h || x.width() != self.geometry.in_w {
            return Err(Error::shape("input grid differs from rulebook grid"));
        }
        let kernel = w.kernel();
        let cout = kernel.cout;
        let taps = self.geometry.k * self.geometry.k;
        let mut out = vec![0.0f32; self.out_coords.len() * cout];
        if cout > 0 {
            out.par_chunks_mut(SITE_CHUNK * cout)
                .zip(self.neighbors.par_chunks(SITE_CHUNK * taps))
                .for_each(|(out_chunk, nbr_chunk)| {
                    for (acc, nbrs) in out_chunk.chunks_exact_mut(cout).zip(nbr_chunk.chunks_exact(taps)) {
                        for (t, &j) in nbrs.iter().enumerate() {
                            if j != NO_SITE {
                                vecmat_acc(acc, x.site(j as usize), kernel.tap_index(t));
                            }
                        }
                    }
                });
        }
        let count = PairCount::new(w, (x.height(), x.width()), self.charged_pairs(), self.incidences);
        let y = SparsePseudoimage::from_raw(
            self.geometry.out_h,
            self.geometry.out_w,
            cout,
            self.out_coords.clone(),
            out,
        );
        Ok((y, count))
    }
}

/// Standard convolution restricted to the sites it can reach. Active outputs
/// smear outward from the input sites.
pub fn conv2d_sparse(x: &SparsePseudoimage, w: &ConvLayerWeights) -> Result<(SparsePseudoimage, PairCount)> {
    w.expect_kind(ConvKind::Standard)?;
    Error::check_channels(w.cin(), x.channels())?;
    Rulebook::standard(x, w.size(), w.stride)?.apply(x, w)
}

/// Submanifold convolution: output sites are exactly the input sites.
pub fn conv2d_subm(x: &SparsePseudoimage, w: &ConvLayerWeights) -> Result<(SparsePseudoimage, PairCount)> {
    w.expect_kind(ConvKind::Submanifold)?;
    Error::check_channels(w.cin(), x.channels())?;
    Rulebook::submanifold(x, w.size())?.apply(x, w)
}

/// Submanifold convolution with a prebuilt rulebook over `x`'s sites.
pub fn conv2d_subm_with(
    x: &SparsePseudoimage,
    w: &ConvLayerWeights,
    rulebook: &Rulebook,
) -> Result<(SparsePseudoimage, PairCount)> {
    w.expect_kind(ConvKind::Submanifold)?;
    if rulebook.out_coords.as_slice() != x.coords() {
        return Err(Error::shape("rulebook built over a different site set"));
    }
    rulebook.apply(x, w)
}

pub fn conv2d_transpose_dense(x: &DensePseudoimage, w: &ConvLayerWeights) -> Result<DensePseudoimage> {
    w.expect_kind(ConvKind::Transpose)?;
    Error::check_channels(w.cin(), x.channels())?;
    let s = w.stride;
    let kernel = w.kernel();
    let cout = kernel.cout;
    let (oh, ow) = (x.height() * s, x.width() * s);
    let mut out = vec![0.0f32; oh * ow * cout];
    if !out.is_empty() {
        out.par_chunks_mut(ow * cout).enumerate().for_each(|(orow, row_out)| {
            let (r, dr) = (orow / s, orow % s);
            for (ocol, acc) in row_out.chunks_exact_mut(cout).enumerate() {
                vecmat_acc(acc, x.cell(r, ocol / s), kernel.tap(dr, ocol % s));
            }
        });
    }
    Ok(DensePseudoimage::from_raw(oh, ow, cout, out))
}

/// Transpose convolution over active sites: each input site expands into its
/// `s × s` output block.
pub fn conv2d_transpose_sparse(
    x: &SparsePseudoimage,
    w: &ConvLayerWeights,
) -> Result<(SparsePseudoimage, PairCount)> {
    w.expect_kind(ConvKind::Transpose)?;
    Error::check_channels(w.cin(), x.channels())?;
    let s = w.stride;
    let kernel = w.kernel();
    let cout = kernel.cout;
    let coords = x.coords();

    // Emit output sites row-major: walk input rows, and within each, every
    // output row of the block across all sites of that input row.
    let mut out_coords = Vec::with_capacity(coords.len() * s * s);
    let mut sources = Vec::with_capacity(coords.len() * s * s);
    let mut start = 0;
    while start < coords.len() {
        let row = coords[start].row;
        let end = start + coords[start..].iter().take_while(|c| c.row == row).count();
        for dr in 0..s {
            for (i, c) in coords.iter().enumerate().take(end).skip(start) {
                for dc in 0..s {
                    out_coords.push(Coord::new(row * s as u32 + dr as u32, c.col * s as u32 + dc as u32));
                    sources.push((i as u32, (dr * s + dc) as u32));
                }
            }
        }
        start = end;
    }

    let mut out = vec![0.0f32; out_coords.len() * cout];
    if cout > 0 {
        out.par_chunks_mut(SITE_CHUNK * cout)
            .zip(sources.par_chunks(SITE_CHUNK))
            .for_each(|(out_chunk, src_chunk)| {
                for (acc, &(i, t)) in out_chunk.chunks_exact_mut(cout).zip(src_chunk) {
                    vecmat_acc(acc, x.site(i as usize), kernel.tap_index(t as usize));
                }
            });
    }
    let pairs = sources.len() as u64;
    let count = PairCount::new(w, (x.height(), x.width()), pairs, pairs);
    let y = SparsePseudoimage::from_raw(x.height() * s, x.width() * s, cout, out_coords, out);
    Ok((y, count))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
}

impl BatchNormParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
        epsilon: f32,
    ) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || running_mean.len() != c || running_var.len() != c {
            return Err(Error::malformed("batchnorm parameter vectors differ in length"));
        }
        let all = gamma.iter().chain(&beta).chain(&running_mean).chain(&running_var);
        if all.clone().any(|v| !v.is_finite()) || !epsilon.is_finite() {
            return Err(Error::malformed("non-finite batchnorm parameter"));
        }
        if epsilon < 0.0 {
            return Err(Error::malformed("batchnorm epsilon must be non-negative"));
        }
        if running_var.iter().any(|&v| v < 0.0 || v + epsilon <= 0.0) {
            return Err(Error::malformed("batchnorm variance + epsilon must be positive"));
        }
        Ok(BatchNormParams { gamma, beta, running_mean, running_var, epsilon })
    }

    /// γ=1, β=0, μ=0, σ²=1.
    pub fn identity(channels: usize, epsilon: f32) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` with `y = x · scale + shift`.
    pub fn affine(&self) -> (Vec<f32>, Vec<f32>) {
        (0..self.channels())
            .map(|c| {
                let scale = self.gamma[c] as f64 / (self.running_var[c] as f64 + self.epsilon as f64).sqrt();
                let shift = self.beta[c] as f64 - self.running_mean[c] as f64 * scale;
                (scale as f32, shift as f32)
            })
            .unzip()
    }
}

pub(crate) fn normalize_in_place(values: &mut [f32], p: &BatchNormParams, then_relu: bool) {
    let (scale, shift) = p.affine();
    let c = scale.len();
    if c == 0 {
        return;
    }
    for cell in values.chunks_exact_mut(c) {
        for ((v, &a), &b) in cell.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * a + b;
            if then_relu {
                *v = relu_scalar(*v);
            }
        }
    }
}

/// Inference-mode batch normalization of every cell, zeros included.
pub fn batchnorm_dense(x: &DensePseudoimage, p: &BatchNormParams) -> Result<DensePseudoimage> {
    Error::check_channels(p.channels(), x.channels())?;
    let mut y = x.clone();
    normalize_in_place(y.values_mut(), p, false);
    Ok(y)
}

/// Batch normalization of stored sites only; absent cells stay zero.
pub fn batchnorm_sparse(x: &SparsePseudoimage, p: &BatchNormParams) -> Result<SparsePseudoimage> {
    Error::check_channels(p.channels(), x.channels())?;
    let mut y = x.clone();
    normalize_in_place(y.values_mut(), p, false);
    Ok(y)
}

#[inline(always)]
fn relu_scalar(v: f32) -> f32 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

pub trait Relu: Sized {
    fn relu(&self) -> Self;
}

impl Relu for DensePseudoimage {
    fn relu(&self) -> Self {
        let mut y = self.clone();
        y.values_mut().iter_mut().for_each(|v| *v = relu_scalar(*v));
        y
    }
}

impl Relu for SparsePseudoimage {
    /// Coordinates are kept; negative sites become stored zeros.
    fn relu(&self) -> Self {
        let mut y = self.clone();
        y.values_mut().iter_mut().for_each(|v| *v = relu_scalar(*v));
        y
    }
}

pub fn relu<T: Relu>(x: &T) -> T {
    x.relu()
}

pub(crate) fn bn_relu_dense(mut x: DensePseudoimage, p: &BatchNormParams) -> Result<DensePseudoimage> {
    Error::check_channels(p.channels(), x.channels())?;
    normalize_in_place(x.values_mut(), p, true);
    Ok(x)
}

pub(crate) fn bn_relu_sparse(mut x: SparsePseudoimage, p: &BatchNormParams) -> Result<SparsePseudoimage> {
    Error::check_channels(p.channels(), x.channels())?;
    normalize_in_place(x.values_mut(), p, true);
    Ok(x)
}
