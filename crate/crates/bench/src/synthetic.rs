//! Seeded clustered point clouds.
//!
//! The generator drops Gaussian blobs of points at uniformly random centres
//! and stops once the number of distinct occupied pillars reaches
//! `round(density_hint · H · W)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spp_core::pillars::{PillarGridConfig, Point, PointCloud};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneParams {
    /// Upper bound on the number of clusters drawn.
    pub clusters: usize,
    pub points_per_cluster: usize,
    /// Standard deviation of a cluster in metres.
    pub cluster_radius: f32,
    /// Target fraction of occupied pillars.
    pub density_hint: f64,
    pub z_min: f32,
    pub z_max: f32,
}

impl SyntheticSceneParams {
    /// Parameters producing roughly `density_hint` occupancy on `cfg`.
    pub fn for_grid(cfg: &PillarGridConfig, density_hint: f64) -> Self {
        SyntheticSceneParams {
            clusters: 100_000,
            points_per_cluster: 200,
            cluster_radius: 3.0 * cfg.pillar_size_x,
            density_hint,
            z_min: cfg.z_min,
            z_max: cfg.z_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if !(self.density_hint > 0.0 && self.density_hint <= 1.0) {
            return bad("density hint must lie in (0, 1]");
        }
        if self.points_per_cluster == 0 {
            return bad("points per cluster must be positive");
        }
        if !(self.cluster_radius.is_finite() && self.cluster_radius > 0.0) {
            return bad("cluster radius must be positive");
        }
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_min < self.z_max) {
            return bad("z range must be non-empty");
        }
        Ok(())
    }
}

pub fn gen_synthetic_scene(p: &SyntheticSceneParams, cfg: &PillarGridConfig, seed: u64) -> Result<PointCloud> {
    p.validate()?;
    cfg.validate()?;
    let (h, w) = (cfg.height(), cfg.width());
    let target = ((p.density_hint * (h * w) as f64).round() as usize).clamp(1, h * w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Normal::new(0.0f32, p.cluster_radius).expect("positive radius");
    let mut occupied = vec![false; h * w];
    let mut filled = 0usize;
    let mut points = Vec::new();
    'clusters: for _ in 0..p.clusters {
        let cx = rng.random_range(cfg.x_min..cfg.x_max);
        let cy = rng.random_range(cfg.y_min..cfg.y_max);
        for _ in 0..p.points_per_cluster {
            let pt = Point::new(
                cx + spread.sample(&mut rng),
                cy + spread.sample(&mut rng),
                rng.random_range(p.z_min..p.z_max),
                rng.random_range(0.0..1.0),
            );
            points.push(pt);
            if let Some(cell) = cfg.cell_of(&pt) {
                let i = cell.row as usize * w + cell.col as usize;
                if !occupied[i] {
                    occupied[i] = true;
                    filled += 1;
                    if filled >= target {
                        break 'clusters;
                    }
                }
            }
        }
    }
    Ok(PointCloud::new(points)?)
}
