//! Point cloud ingestion and the pillar feature net.
//!
//! Points are binned into vertical pillars over a bird's-eye-view grid
//! (columns along x, rows along y). Each kept point becomes a 9-feature row
//! `(x, y, z, r, x-x̄, y-ȳ, z-z̄, x-x_c, y-y_c)` where `(x̄, ȳ, z̄)` is the mean
//! of the pillar's kept points and `(x_c, y_c)` is the cell centre. The
//! vectorizer maps every point to `C` channels and max-pools per pillar,
//! producing a sparse pseudoimage directly; [`scatter`] is the dense
//! baseline's extra step.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{normalize_in_place, BatchNormParams};
use crate::error::{Error, Result};
use crate::tensor::{to_dense, Coord, DensePseudoimage, SparsePseudoimage};

pub const POINT_FEATURES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub reflectance: f32,
}

impl Point {
    pub const fn new(x: f32, y: f32, z: f32, reflectance: f32) -> Self {
        Point { x, y, z, reflectance }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.reflectance.is_finite()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Parse { record: i, reason: "non-finite component".into() });
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// KITTI velodyne layout: packed little-endian `f32` quadruples.
    pub fn to_kitti_bin(&self) -> Vec<u8> {
        self.points
            .iter()
            .flat_map(|p| [p.x, p.y, p.z, p.reflectance])
            .flat_map(f32::to_le_bytes)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    KittiBin,
    Csv,
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti-bin" | "bin" => Ok(CloudFormat::KittiBin),
            "csv" => Ok(CloudFormat::Csv),
            other => Err(Error::config(format!("unknown point cloud format '{other}'"))),
        }
    }
}

pub fn read_point_cloud(bytes: &[u8], format: CloudFormat) -> Result<PointCloud> {
    match format {
        CloudFormat::KittiBin => {
            if bytes.len() % 16 != 0 {
                return Err(Error::Parse {
                    record: bytes.len() / 16,
                    reason: format!("truncated record: {} trailing bytes", bytes.len() % 16),
                });
            }
            let points = bytes
                .chunks_exact(16)
                .map(|rec| {
                    let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
                    Point::new(f(0), f(1), f(2), f(3))
                })
                .collect();
            PointCloud::new(points)
        }
        CloudFormat::Csv => {
            let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse { record: 0, reason: e.to_string() })?;
            let mut points = Vec::new();
            for (line_no, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                if fields.len() != 4 {
                    return Err(Error::Parse {
                        record: line_no,
                        reason: format!("expected 4 columns, found {}", fields.len()),
                    });
                }
                let mut v = [0.0f32; 4];
                for (slot, field) in v.iter_mut().zip(&fields) {
                    *slot = field.parse().map_err(|_| Error::Parse {
                        record: line_no,
                        reason: format!("non-numeric field '{field}'"),
                    })?;
                    if !slot.is_finite() {
                        return Err(Error::Parse { record: line_no, reason: format!("non-finite field '{field}'") });
                    }
                }
                points.push(Point::new(v[0], v[1], v[2], v[3]));
            }
            Ok(PointCloud { points })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarGridConfig {
    pub pillar_size_x: f32,
    pub pillar_size_y: f32,
    pub x_min: f32,
    pub x_max: f32,
    pub y_min: f32,
    pub y_max: f32,
    pub z_min: f32,
    pub z_max: f32,
    pub max_pillars: usize,
    pub max_points_per_pillar: usize,
    pub out_channels: usize,
}

impl PillarGridConfig {
    /// A grid of `height × width` square pillars anchored at the origin in
    /// x and centred on zero in y.
    pub fn with_grid(height: usize, width: usize, pillar_size: f32, out_channels: usize) -> Self {
        let x_extent = width as f32 * pillar_size;
        let y_extent = height as f32 * pillar_size;
        PillarGridConfig {
            pillar_size_x: pillar_size,
            pillar_size_y: pillar_size,
            x_min: 0.0,
            x_max: x_extent,
            y_min: -y_extent / 2.0,
            y_max: y_extent / 2.0,
            z_min: -3.0,
            z_max: 1.0,
            max_pillars: 12000,
            max_points_per_pillar: 100,
            out_channels,
        }
    }

    pub fn width(&self) -> usize {
        ((self.x_max - self.x_min) / self.pillar_size_x).round() as usize
    }

    pub fn height(&self) -> usize {
        ((self.y_max - self.y_min) / self.pillar_size_y).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.pillar_size_x,
            self.pillar_size_y,
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.z_min,
            self.z_max,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("non-finite grid bound"));
        }
        if self.pillar_size_x <= 0.0 || self.pillar_size_y <= 0.0 {
            return Err(Error::config("pillar sizes must be positive"));
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min || self.z_max <= self.z_min {
            return Err(Error::config("degenerate grid range"));
        }
        let (h, w) = (self.height(), self.width());
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::config(format!("grid {h}x{w} must be non-empty and divisible by 8")));
        }
        if self.max_pillars == 0 || self.max_points_per_pillar == 0 || self.out_channels == 0 {
            return Err(Error::config("max_pillars, max_points_per_pillar and out_channels must be positive"));
        }
        Ok(())
    }

    /// Cell of an in-range point; half-open on every axis.
    pub fn cell_of(&self, p: &Point) -> Option<Coord> {
        let inside = p.x >= self.x_min
            && p.x < self.x_max
            && p.y >= self.y_min
            && p.y < self.y_max
            && p.z >= self.z_min
            && p.z < self.z_max;
        if !inside {
            return None;
        }
        let col = ((p.x - self.x_min) / self.pillar_size_x).floor() as usize;
        let row = ((p.y - self.y_min) / self.pillar_size_y).floor() as usize;
        (row < self.height() && col < self.width()).then(|| Coord::new(row as u32, col as u32))
    }

    pub fn cell_center(&self, c: Coord) -> (f64, f64) {
        (
            self.x_min as f64 + (c.col as f64 + 0.5) * self.pillar_size_x as f64,
            self.y_min as f64 + (c.row as f64 + 0.5) * self.pillar_size_y as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarSet {
    pub height: usize,
    pub width: usize,
    pub max_points_per_pillar: usize,
    pub pillar_coords: Vec<Coord>,
    /// `max_points_per_pillar × 9` rows per pillar, zero-padded.
    pub point_features: Vec<f32>,
    pub point_counts: Vec<usize>,
}

impl PillarSet {
    pub fn len(&self) -> usize {
        self.pillar_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pillar_coords.is_empty()
    }

    /// Feature rows of pillar `i`, valid points only.
    pub fn points(&self, i: usize) -> impl Iterator<Item = &[f32]> {
        let block = self.max_points_per_pillar * POINT_FEATURES;
        self.point_features[i * block..(i + 1) * block]
            .chunks_exact(POINT_FEATURES)
            .take(self.point_counts[i])
    }
}

/// Bins the cloud into pillars and builds the per-point features.
///
/// Overfull pillars keep a uniform random subset drawn from `seed`; when
/// more than `max_pillars` pillars are occupied, the most populated are kept
/// (ties to the earlier row-major cell).
pub fn pillarize(cloud: &PointCloud, cfg: &PillarGridConfig, seed: u64) -> Result<PillarSet> {
    cfg.validate()?;
    let width = cfg.width();
    let mut binned: Vec<(usize, usize)> = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| cfg.cell_of(p).map(|c| (c.row as usize * width + c.col as usize, i)))
        .collect();
    // stable: points keep file order inside a pillar
    binned.sort_by_key(|&(cell, _)| cell);

    let mut groups: Vec<(usize, &[(usize, usize)])> = Vec::new();
    let mut rest = binned.as_slice();
    while let Some(&(cell, _)) = rest.first() {
        let n = rest.iter().take_while(|e| e.0 == cell).count();
        groups.push((cell, &rest[..n]));
        rest = &rest[n..];
    }
    if groups.len() > cfg.max_pillars {
        groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        groups.truncate(cfg.max_pillars);
        groups.sort_by_key(|g| g.0);
    }

    let n_max = cfg.max_points_per_pillar;
    let block = n_max * POINT_FEATURES;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pillar_coords = Vec::with_capacity(groups.len());
    let mut point_counts = Vec::with_capacity(groups.len());
    let mut point_features = vec![0.0f32; groups.len() * block];
    for (g, (cell, members)) in groups.iter().enumerate() {
        let coord = Coord::new((cell / width) as u32, (cell % width) as u32);
        let kept: Vec<&Point> = if members.len() > n_max {
            let mut picks = index::sample(&mut rng, members.len(), n_max).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|k| &cloud.points[members[k].1]).collect()
        } else {
            members.iter().map(|&(_, i)| &cloud.points[i]).collect()
        };
        let n = kept.len() as f64;
        let mean = kept.iter().fold([0.0f64; 3], |acc, p| {
            [acc[0] + p.x as f64, acc[1] + p.y as f64, acc[2] + p.z as f64]
        });
        let mean = mean.map(|s| s / n);
        let (cx, cy) = cfg.cell_center(coord);
        let dst = &mut point_features[g * block..(g + 1) * block];
        for (row, p) in dst.chunks_exact_mut(POINT_FEATURES).zip(&kept) {
            let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
            row.copy_from_slice(&[
                p.x,
                p.y,
                p.z,
                p.reflectance,
                (x - mean[0]) as f32,
                (y - mean[1]) as f32,
                (z - mean[2]) as f32,
                (x - cx) as f32,
                (y - cy) as f32,
            ]);
        }
        pillar_coords.push(coord);
        point_counts.push(kept.len());
    }
    Ok(PillarSet {
        height: cfg.height(),
        width,
        max_points_per_pillar: n_max,
        pillar_coords,
        point_features,
        point_counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorizerWeights {
    /// `9 × C`, row-major by input feature.
    pub linear: Vec<f32>,
    pub batchnorm: BatchNormParams,
}

impl VectorizerWeights {
    pub fn new(linear: Vec<f32>, batchnorm: BatchNormParams) -> Result<Self> {
        let c = batchnorm.channels();
        if linear.len() != POINT_FEATURES * c {
            return Err(Error::ChannelMismatch { expected: POINT_FEATURES * c, actual: linear.len() });
        }
        if linear.iter().any(|v| !v.is_finite()) {
            return Err(Error::malformed("non-finite vectorizer weight"));
        }
        Ok(VectorizerWeights { linear, batchnorm })
    }

    pub fn channels(&self) -> usize {
        self.batchnorm.channels()
    }
}

/// Per point: linear map, batch norm, ReLU; per pillar: channel-wise max.
pub fn vectorize(p: &PillarSet, w: &VectorizerWeights, cfg: &PillarGridConfig) -> Result<SparsePseudoimage> {
    let c = w.channels();
    Error::check_channels(cfg.out_channels, c)?;
    if p.height != cfg.height() || p.width != cfg.width() || p.max_points_per_pillar != cfg.max_points_per_pillar {
        return Err(Error::shape("pillar set was built for a different grid"));
    }
    let mut values = vec![0.0f32; p.len() * c];
    let mut point_out = vec![0.0f32; p.max_points_per_pillar * c];
    for (i, pooled) in values.chunks_exact_mut(c.max(1)).enumerate().take(p.len()) {
        let n = p.point_counts[i];
        let rows = &mut point_out[..n * c];
        rows.fill(0.0);
        for (out, feat) in rows.chunks_exact_mut(c).zip(p.points(i)) {
            for (f, &v) in feat.iter().enumerate() {
                for (o, &k) in out.iter_mut().zip(&w.linear[f * c..(f + 1) * c]) {
                    *o += v * k;
                }
            }
        }
        normalize_in_place(rows, &w.batchnorm, true);
        // every value is post-ReLU, so zero is a neutral start for the max
        for row in rows.chunks_exact(c) {
            for (m, &v) in pooled.iter_mut().zip(row) {
                if v > *m {
                    *m = v;
                }
            }
        }
    }
    Ok(SparsePseudoimage::from_raw(p.height, p.width, c, p.pillar_coords.clone(), values))
}

/// Writes the pillar vectors into a dense grid.
pub fn scatter(s: &SparsePseudoimage) -> DensePseudoimage {
    to_dense(s)
}
