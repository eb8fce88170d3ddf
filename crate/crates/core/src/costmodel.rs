//! Closed-form convolution counts for both backbones.
//!
//! One "convolution" is one full kernel application with `cin · cout`
//! channel-pair work; counts are absolute (already multiplied by `C²HW`).
//! The baseline count is exact. The sparse count is an upper bound in the
//! input density `D`: no block can hold more sites than the input had, nor
//! more than its grid has cells.
//!
//! Derivation, for a `H × W × C` input with `D·HW` sites:
//!
//! * block k (1-based) runs on a `HW/4^k` grid with width `2^(k-1)·C`, so one
//!   3×3 layer there costs `4^(k-1)·C² · min(HW/4^k, D·HW)`. Summed over 3, 5
//!   and 5 layers this gives `min(3/4, 3D) + min(5/4, 20D) + min(5/4, 80D)`.
//! * a 2×2 stride-2 conv is charged per input site, `cin·cout/4` each. The
//!   first sees exactly `D·HW` sites (hence the uncapped `D/4`), later ones at
//!   most `min(HW/4^(k-1), D·HW)`.
//! * a transpose conv is charged per input site with `cin · 2C` work.

use serde::{Deserialize, Serialize};

use crate::conv::{ConvKind, PairCount};
use crate::error::{Error, Result};
use crate::tensor::{density, SparsePseudoimage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpCountReport {
    pub conv3x3: f64,
    pub conv2x2: f64,
    pub conv_t1x1: f64,
    pub conv_t2x2: f64,
    pub conv_t4x4: f64,
    pub total: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountRow {
    Conv3x3,
    Conv2x2,
    ConvT1x1,
    ConvT2x2,
    ConvT4x4,
}

impl CountRow {
    pub const ALL: [CountRow; 5] =
        [CountRow::Conv3x3, CountRow::Conv2x2, CountRow::ConvT1x1, CountRow::ConvT2x2, CountRow::ConvT4x4];

    /// Row a kernel invocation is counted under. Stride-1 layers of any
    /// odd size (including the 9×9 wide variant) and 3×3 downsamples count
    /// as 3×3 convs.
    pub fn of(count: &PairCount) -> Result<CountRow> {
        let k = count.kernel_shape.0;
        match (count.kind, k) {
            (ConvKind::Transpose, 1) => Ok(CountRow::ConvT1x1),
            (ConvKind::Transpose, 2) => Ok(CountRow::ConvT2x2),
            (ConvKind::Transpose, 4) => Ok(CountRow::ConvT4x4),
            (ConvKind::Standard, 2) => Ok(CountRow::Conv2x2),
            (ConvKind::Standard | ConvKind::Submanifold, k) if k % 2 == 1 && k > 1 => Ok(CountRow::Conv3x3),
            _ => Err(Error::config(format!("{:?} {k}x{k} kernel has no cost-model row", count.kind))),
        }
    }
}

impl OpCountReport {
    fn from_rows(rows: [f64; 5], height: usize, width: usize, channels: usize, density: f64) -> Self {
        OpCountReport {
            conv3x3: rows[0],
            conv2x2: rows[1],
            conv_t1x1: rows[2],
            conv_t2x2: rows[3],
            conv_t4x4: rows[4],
            total: rows.iter().sum(),
            height,
            width,
            channels,
            density,
        }
    }

    pub fn row(&self, row: CountRow) -> f64 {
        match row {
            CountRow::Conv3x3 => self.conv3x3,
            CountRow::Conv2x2 => self.conv2x2,
            CountRow::ConvT1x1 => self.conv_t1x1,
            CountRow::ConvT2x2 => self.conv_t2x2,
            CountRow::ConvT4x4 => self.conv_t4x4,
        }
    }

    /// `1 - self.total / baseline.total`.
    pub fn reduction_vs(&self, baseline: &OpCountReport) -> f64 {
        1.0 - self.total / baseline.total
    }
}

fn check_shape(h: usize, w: usize, c: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::shape(format!("{h}x{w} grid must be non-empty and divisible by 8")));
    }
    if c == 0 {
        return Err(Error::config("channel width must be positive"));
    }
    Ok(())
}

/// Exact counts of the dense baseline backbone.
pub fn analytic_baseline(h: usize, w: usize, c: usize) -> Result<OpCountReport> {
    check_shape(h, w, c)?;
    let unit = (c * c) as f64 * (h * w) as f64;
    let rows = [15.0 / 4.0 * unit, 0.0, 0.5 * unit, 0.25 * unit, 0.125 * unit];
    Ok(OpCountReport::from_rows(rows, h, w, c, 1.0))
}

/// Upper bound on the sparse backbone's counts at input density `d`.
pub fn analytic_sparse_bound(h: usize, w: usize, c: usize, d: f64) -> Result<OpCountReport> {
    check_shape(h, w, c)?;
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::config(format!("density {d} outside [0, 1]")));
    }
    let unit = (c * c) as f64 * (h * w) as f64;
    let conv3x3 = (0.75f64).min(3.0 * d) + (1.25f64).min(20.0 * d) + (1.25f64).min(80.0 * d);
    let conv2x2 = d / 4.0 + (0.125f64).min(d / 2.0) + (0.125f64).min(2.0 * d);
    let rows = [
        conv3x3 * unit,
        conv2x2 * unit,
        (0.5f64).min(2.0 * d) * unit,
        (0.25f64).min(4.0 * d) * unit,
        (0.125f64).min(8.0 * d) * unit,
    ];
    Ok(OpCountReport::from_rows(rows, h, w, c, d))
}

/// Relative slack allowed when comparing a measured count to its bound.
pub const BOUND_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowMargin {
    pub row: CountRow,
    pub empirical: f64,
    pub bound: f64,
    /// `bound - empirical`; negative means the bound was exceeded.
    pub margin: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub rows: Vec<RowMargin>,
    pub violations: usize,
}

impl Reconciliation {
    pub fn is_ok(&self) -> bool {
        self.violations == 0
    }

    pub fn row(&self, row: CountRow) -> &RowMargin {
        self.rows.iter().find(|r| r.row == row).expect("every row is reconciled")
    }
}

/// Sums measured weighted counts per row and checks them against `analytic`.
///
/// The counts must come from one sparse backbone run whose input matches
/// the report's grid and channel width.
pub fn reconcile(empirical: &[PairCount], analytic: &OpCountReport) -> Result<Reconciliation> {
    let mut sums = [0.0f64; 5];
    for count in empirical {
        let row = CountRow::of(count)?;
        let idx = CountRow::ALL.iter().position(|&r| r == row).unwrap();
        sums[idx] += count.weighted;
    }
    // the first downsample sees the backbone input itself
    if let Some(first) = empirical.iter().find(|c| c.kind == ConvKind::Standard && c.kernel_shape == (2, 2)) {
        if first.input_grid != (analytic.height, analytic.width) || first.cin != analytic.channels {
            return Err(Error::config(format!(
                "counts measured on {}x{}x{} but bound is for {}x{}x{}",
                first.input_grid.0, first.input_grid.1, first.cin, analytic.height, analytic.width, analytic.channels
            )));
        }
    }
    let rows: Vec<RowMargin> = CountRow::ALL
        .iter()
        .zip(sums)
        .map(|(&row, emp)| {
            let bound = analytic.row(row);
            RowMargin { row, empirical: emp, bound, margin: bound - emp, violated: emp > bound * (1.0 + BOUND_RTOL) }
        })
        .collect();
    let violations = rows.iter().filter(|r| r.violated).count();
    Ok(Reconciliation { rows, violations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Order statistics over value densities; even counts take the lower middle.
pub fn density_stats(scenes: &[SparsePseudoimage]) -> Result<DensityStats> {
    let values: Vec<f64> = scenes.iter().map(|s| density(s).value_density).collect();
    order_stats(&values)
}

pub fn order_stats(values: &[f64]) -> Result<DensityStats> {
    if values.is_empty() {
        return Err(Error::malformed("density statistics need at least one scene"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DensityStats { min: sorted[0], median: sorted[(sorted.len() - 1) / 2], max: sorted[sorted.len() - 1] })
}
