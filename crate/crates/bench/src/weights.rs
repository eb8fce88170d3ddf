//! Seeded model weights and the `SPPW` container.
//!
//! Layout: the magic `SPPW`, a `u32` version, a `u64` manifest length, the
//! manifest as JSON text, then the tensor blobs as little-endian `f32`.
//! Manifest offsets are byte offsets into the blob section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spp_core::backbone::{BackboneWeights, BlockWeights, ConvBn, LAYERS_PER_BLOCK, UPSAMPLE_STRIDES, WIDE_KERNEL};
use spp_core::conv::{BatchNormParams, ConvKind, ConvLayerWeights, Kernel};
use spp_core::pillars::{VectorizerWeights, POINT_FEATURES};

use crate::error::{BenchError, Result};

pub const MAGIC: &[u8; 4] = b"SPPW";
pub const VERSION: u32 = 1;
/// Output width of the head stub: two anchors, each with a class score,
/// seven box terms and two heading bins.
pub const HEAD_CHANNELS: usize = 20;
pub const BN_EPSILON: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub vectorizer: VectorizerWeights,
    pub backbone: BackboneWeights,
    pub head: ConvLayerWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub channels: usize,
    pub head_channels: usize,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

impl ModelWeights {
    pub fn channels(&self) -> usize {
        self.backbone.channels
    }

    /// Flattened `(name, shape, values)` listing in container order.
    fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        let c = self.channels();
        out.push(("vectorizer.linear".to_string(), vec![POINT_FEATURES, c], self.vectorizer.linear.clone()));
        push_bn(&mut out, "vectorizer.bn", &self.vectorizer.batchnorm);
        for (k, b) in self.backbone.blocks.iter().enumerate() {
            let p = format!("block{}", k + 1);
            push_kernel(&mut out, &format!("{p}.down_dense"), b.down_dense.kernel());
            push_kernel(&mut out, &format!("{p}.down_sparse"), b.down_sparse.kernel());
            push_bn(&mut out, &format!("{p}.down_bn"), &b.down_bn);
            for (i, l) in b.layers.iter().enumerate() {
                push_kernel(&mut out, &format!("{p}.layer{i}.conv"), l.conv.kernel());
                push_bn(&mut out, &format!("{p}.layer{i}.bn"), &l.bn);
            }
            if let Some(wide) = &b.wide_first {
                push_kernel(&mut out, &format!("{p}.wide_first"), wide.kernel());
            }
            push_kernel(&mut out, &format!("{p}.up.conv"), b.up.conv.kernel());
            push_bn(&mut out, &format!("{p}.up.bn"), &b.up.bn);
        }
        push_kernel(&mut out, "head", self.head.kernel());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut offset = 0u64;
        let entries = tensors
            .iter()
            .map(|(name, shape, values)| {
                let e = TensorEntry { name: name.clone(), shape: shape.clone(), offset };
                offset += 4 * values.len() as u64;
                e
            })
            .collect();
        let manifest = Manifest {
            channels: self.channels(),
            head_channels: self.head.cout(),
            dtype: "f32-le".to_string(),
            tensors: entries,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, values) in &tensors {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, blobs) = read_manifest(bytes)?;
        let mut table = BTreeMap::new();
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let start = usize::try_from(e.offset).map_err(|_| corrupt(format!("{}: offset overflows", e.name)))?;
            let end = start
                .checked_add(4 * n)
                .filter(|&end| end <= blobs.len())
                .ok_or_else(|| corrupt(format!("{}: blob runs past the end of the file", e.name)))?;
            let values: Vec<f32> =
                blobs[start..end].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            if table.insert(e.name.clone(), (e.shape.clone(), values)).is_some() {
                return Err(corrupt(format!("duplicate tensor {}", e.name)));
            }
        }
        let mut t = Tensors { table };
        let c = manifest.channels;
        let vectorizer = VectorizerWeights::new(t.take("vectorizer.linear", &[POINT_FEATURES, c])?, t.bn("vectorizer.bn", c)?)?;
        let mut blocks = Vec::with_capacity(3);
        for k in 0..3 {
            let p = format!("block{}", k + 1);
            let cin = if k == 0 { c } else { c << (k - 1) };
            let cout = c << k;
            let s = UPSAMPLE_STRIDES[k];
            let layers = (0..LAYERS_PER_BLOCK[k])
                .map(|i| {
                    Ok(ConvBn {
                        conv: t.conv(&format!("{p}.layer{i}.conv"), 3, cout, cout, 1, ConvKind::Standard)?,
                        bn: t.bn(&format!("{p}.layer{i}.bn"), cout)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let wide_name = format!("{p}.wide_first");
            let wide_first = if t.table.contains_key(&wide_name) {
                Some(t.conv(&wide_name, WIDE_KERNEL, cout, cout, 1, ConvKind::Standard)?)
            } else {
                None
            };
            blocks.push(BlockWeights {
                down_dense: t.conv(&format!("{p}.down_dense"), 3, cin, cout, 2, ConvKind::Standard)?,
                down_sparse: t.conv(&format!("{p}.down_sparse"), 2, cin, cout, 2, ConvKind::Standard)?,
                down_bn: t.bn(&format!("{p}.down_bn"), cout)?,
                layers,
                wide_first,
                up: ConvBn {
                    conv: t.conv(&format!("{p}.up.conv"), s, cout, 2 * c, s, ConvKind::Transpose)?,
                    bn: t.bn(&format!("{p}.up.bn"), 2 * c)?,
                },
            });
        }
        let head = t.conv("head", 1, 6 * c, manifest.head_channels, 1, ConvKind::Standard)?;
        if let Some(name) = t.table.keys().next() {
            return Err(corrupt(format!("unexpected tensor {name}")));
        }
        let backbone = BackboneWeights { channels: c, blocks };
        backbone.validate()?;
        Ok(ModelWeights { vectorizer, backbone, head })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| BenchError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| BenchError::io(path, e))?;
        ModelWeights::from_bytes(&bytes).map_err(|e| match e {
            BenchError::Container(reason) => BenchError::format(path, reason),
            other => other,
        })
    }
}

/// Splits a container into its parsed manifest and the blob section.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing SPPW magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("manifest length exceeds file size"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..end]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.dtype != "f32-le" {
        return Err(corrupt(format!("unsupported dtype {}", manifest.dtype)));
    }
    Ok((manifest, &bytes[end..]))
}

fn corrupt(msg: impl Into<String>) -> BenchError {
    BenchError::Container(msg.into())
}

struct Tensors {
    table: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Tensors {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let (found, values) = self.table.remove(name).ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if found != shape {
            return Err(corrupt(format!("{name}: shape {found:?}, expected {shape:?}")));
        }
        Ok(values)
    }

    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, stride: usize, kind: ConvKind) -> Result<ConvLayerWeights> {
        let data = self.take(name, &[k, k, cin, cout])?;
        Ok(ConvLayerWeights::new(Kernel::new(k, k, cin, cout, data)?, stride, kind)?)
    }

    fn bn(&mut self, prefix: &str, c: usize) -> Result<BatchNormParams> {
        let gamma = self.take(&format!("{prefix}.gamma"), &[c])?;
        let beta = self.take(&format!("{prefix}.beta"), &[c])?;
        let mean = self.take(&format!("{prefix}.running_mean"), &[c])?;
        let var = self.take(&format!("{prefix}.running_var"), &[c])?;
        let eps = self.take(&format!("{prefix}.epsilon"), &[1])?;
        Ok(BatchNormParams::new(gamma, beta, mean, var, eps[0])?)
    }
}

fn push_kernel(out: &mut Vec<(String, Vec<usize>, Vec<f32>)>, name: &str, k: &Kernel) {
    out.push((name.to_string(), vec![k.kh(), k.kw(), k.cin(), k.cout()], k.data().to_vec()));
}

fn push_bn(out: &mut Vec<(String, Vec<usize>, Vec<f32>)>, prefix: &str, bn: &BatchNormParams) {
    let c = bn.channels();
    out.push((format!("{prefix}.gamma"), vec![c], bn.gamma.clone()));
    out.push((format!("{prefix}.beta"), vec![c], bn.beta.clone()));
    out.push((format!("{prefix}.running_mean"), vec![c], bn.running_mean.clone()));
    out.push((format!("{prefix}.running_var"), vec![c], bn.running_var.clone()));
    out.push((format!("{prefix}.epsilon"), vec![1], vec![bn.epsilon]));
}

struct HeNormal {
    rng: ChaCha8Rng,
}

impl HeNormal {
    /// Zero-mean normal draws with variance `2 / fan_in`.
    fn draw(&mut self, n: usize, fan_in: usize) -> Vec<f32> {
        let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        (0..n).map(|_| normal.sample(&mut self.rng) as f32).collect()
    }

    fn kernel(&mut self, k: usize, cin: usize, cout: usize, fan_in: usize) -> Kernel {
        Kernel::new(k, k, cin, cout, self.draw(k * k * cin * cout, fan_in)).expect("finite kernel")
    }

    fn conv(&mut self, k: usize, cin: usize, cout: usize, stride: usize) -> ConvLayerWeights {
        let kernel = self.kernel(k, cin, cout, k * k * cin);
        ConvLayerWeights::new(kernel, stride, ConvKind::Standard).expect("valid conv shape")
    }
}

/// Random weights for every variant, including the 9×9 wide kernels.
///
/// Forward kernels draw from `N(0, 2 / (k·k·cin))`. A transpose output cell
/// receives exactly one tap per input channel, so transpose kernels use
/// `fan_in = cin`.
pub fn generate_weights(channels: usize, seed: u64) -> Result<ModelWeights> {
    if channels == 0 {
        return Err(BenchError::Config("channel width must be at least 1".into()));
    }
    let c = channels;
    let mut g = HeNormal { rng: ChaCha8Rng::seed_from_u64(seed) };
    let bn = |n: usize| BatchNormParams::identity(n, BN_EPSILON);
    let vectorizer = VectorizerWeights::new(g.draw(POINT_FEATURES * c, POINT_FEATURES), bn(c))?;
    let mut blocks = Vec::with_capacity(3);
    for k in 0..3 {
        let cin = if k == 0 { c } else { c << (k - 1) };
        let cout = c << k;
        let s = UPSAMPLE_STRIDES[k];
        let down_dense = g.conv(3, cin, cout, 2);
        let down_sparse = g.conv(2, cin, cout, 2);
        let layers = (0..LAYERS_PER_BLOCK[k]).map(|_| ConvBn { conv: g.conv(3, cout, cout, 1), bn: bn(cout) }).collect();
        let wide_first = Some(g.conv(WIDE_KERNEL, cout, cout, 1));
        let up_kernel = g.kernel(s, cout, 2 * c, cout);
        let up = ConvBn { conv: ConvLayerWeights::new(up_kernel, s, ConvKind::Transpose)?, bn: bn(2 * c) };
        blocks.push(BlockWeights { down_dense, down_sparse, down_bn: bn(cout), layers, wide_first, up });
    }
    let head = ConvLayerWeights::from_shared(Arc::new(g.kernel(1, 6 * c, HEAD_CHANNELS, 6 * c)), 1, ConvKind::Standard)?;
    let backbone = BackboneWeights { channels: c, blocks };
    backbone.validate()?;
    Ok(ModelWeights { vectorizer, backbone, head })
}
