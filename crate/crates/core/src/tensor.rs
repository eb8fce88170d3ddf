//! Dense and COO sparse pseudoimages.
//!
//! A pseudoimage is a `height × width × channels` grid of `f32` features.
//! The dense form stores every cell row-major with channels innermost. The
//! sparse form stores a row-major sorted list of occupied sites and one
//! channel vector per site. Stored sites may carry an all-zero vector (for
//! example after a ReLU); they are never pruned except by [`from_dense`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grid cell. Ordering is row-major, which is the canonical site order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub const fn new(row: u32, col: u32) -> Self {
        Coord { row, col }
    }
}

impl From<(u32, u32)> for Coord {
    fn from((row, col): (u32, u32)) -> Self {
        Coord { row, col }
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::malformed(format!(
            "non-finite value {} at flat index {i}",
            values[i]
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensePseudoimage {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl DensePseudoimage {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::malformed(format!(
                "dense buffer holds {} values, {height}x{width}x{channels} needs {}",
                values.len(),
                height * width * channels
            )));
        }
        check_finite(&values)?;
        Ok(DensePseudoimage { height, width, channels, values })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        DensePseudoimage { height, width, channels, values: vec![0.0; height * width * channels] }
    }

    /// Caller guarantees the length invariant; finiteness follows from the
    /// kernels operating on finite inputs.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), height * width * channels);
        DensePseudoimage { height, width, channels, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Channel vector of one cell.
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.values[start..start + self.channels]
    }

    /// Number of cells with at least one non-zero channel.
    pub fn nonzero_cells(&self) -> usize {
        if self.channels == 0 {
            return 0;
        }
        self.values
            .chunks_exact(self.channels)
            .filter(|cell| cell.iter().any(|&v| v != 0.0))
            .count()
    }

    /// Concatenate along the channel axis. All parts share a grid.
    pub fn concat_channels(parts: &[&DensePseudoimage]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::malformed("nothing to concatenate"))?;
        let (h, w) = (first.height, first.width);
        if let Some(bad) = parts.iter().find(|p| p.height != h || p.width != w) {
            return Err(Error::shape(format!(
                "concat of {}x{} with {}x{}",
                h, w, bad.height, bad.width
            )));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut values = Vec::with_capacity(h * w * channels);
        for cell in 0..h * w {
            for p in parts {
                values.extend_from_slice(&p.values[cell * p.channels..(cell + 1) * p.channels]);
            }
        }
        Ok(DensePseudoimage { height: h, width: w, channels, values })
    }

    /// Copy of channels `range` of every cell.
    pub fn channel_slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.channels || range.start > range.end {
            return Err(Error::shape(format!(
                "channel range {range:?} outside 0..{}",
                self.channels
            )));
        }
        let c = range.len();
        let mut values = Vec::with_capacity(self.height * self.width * c);
        for cell in self.values.chunks_exact(self.channels.max(1)) {
            values.extend_from_slice(&cell[range.clone()]);
        }
        Ok(DensePseudoimage { height: self.height, width: self.width, channels: c, values })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * self.values.len());
        write_header(&mut out, self.height, self.width, self.channels, self.height * self.width);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, w, c, nnz, body) = read_header(bytes)?;
        if nnz != h * w {
            return Err(Error::malformed(format!(
                "dense container declares {nnz} cells for a {h}x{w} grid"
            )));
        }
        let values = read_f32s(body, h * w * c)?;
        DensePseudoimage::new(h, w, c, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePseudoimage {
    height: usize,
    width: usize,
    channels: usize,
    coords: Vec<Coord>,
    values: Vec<f32>,
}

impl SparsePseudoimage {
    /// Builds a sparse image whose coordinates are already canonical.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        coords: Vec<Coord>,
        values: Vec<f32>,
    ) -> Result<Self> {
        check_parts(height, width, channels, &coords, &values)?;
        if let Some(i) = coords.windows(2).position(|p| p[0] >= p[1]) {
            let (a, b) = (coords[i], coords[i + 1]);
            return Err(if a == b {
                Error::malformed(format!("duplicate coordinate ({}, {})", a.row, a.col))
            } else {
                Error::malformed(format!(
                    "coordinates not row-major: ({}, {}) precedes ({}, {})",
                    a.row, a.col, b.row, b.col
                ))
            });
        }
        Ok(SparsePseudoimage { height, width, channels, coords, values })
    }

    pub fn empty(height: usize, width: usize, channels: usize) -> Self {
        SparsePseudoimage { height, width, channels, coords: Vec::new(), values: Vec::new() }
    }

    pub(crate) fn from_raw(
        height: usize,
        width: usize,
        channels: usize,
        coords: Vec<Coord>,
        values: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(values.len(), coords.len() * channels);
        debug_assert!(coords.windows(2).all(|p| p[0] < p[1]));
        SparsePseudoimage { height, width, channels, coords, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    /// Flat site values, `channels` per stored site.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn nnz(&self) -> usize {
        self.coords.len()
    }

    pub fn site(&self, index: usize) -> &[f32] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Coord, &[f32])> + '_ {
        self.coords
            .iter()
            .copied()
            .zip(self.values.chunks_exact(self.channels.max(1)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 16 * self.coords.len() + 4 * self.values.len());
        write_header(&mut out, self.height, self.width, self.channels, self.coords.len());
        for c in &self.coords {
            out.extend_from_slice(&(c.row as u64).to_le_bytes());
            out.extend_from_slice(&(c.col as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, w, c, nnz, body) = read_header(bytes)?;
        let coord_bytes = nnz
            .checked_mul(16)
            .filter(|&n| n <= body.len())
            .ok_or_else(|| Error::malformed("sparse container truncated in coordinates"))?;
        let mut coords = Vec::with_capacity(nnz);
        for pair in body[..coord_bytes].chunks_exact(16) {
            let row = u64::from_le_bytes(pair[..8].try_into().unwrap());
            let col = u64::from_le_bytes(pair[8..].try_into().unwrap());
            let row = u32::try_from(row).map_err(|_| Error::malformed("row exceeds u32"))?;
            let col = u32::try_from(col).map_err(|_| Error::malformed("col exceeds u32"))?;
            coords.push(Coord::new(row, col));
        }
        let values = read_f32s(&body[coord_bytes..], nnz * c)?;
        SparsePseudoimage::new(h, w, c, coords, values)
    }
}

fn check_parts(
    height: usize,
    width: usize,
    channels: usize,
    coords: &[Coord],
    values: &[f32],
) -> Result<()> {
    if values.len() != coords.len() * channels {
        return Err(Error::malformed(format!(
            "{} site values for {} coordinates of {channels} channels",
            values.len(),
            coords.len()
        )));
    }
    if let Some(c) = coords
        .iter()
        .find(|c| c.row as usize >= height || c.col as usize >= width)
    {
        return Err(Error::malformed(format!(
            "coordinate ({}, {}) outside {height}x{width} grid",
            c.row, c.col
        )));
    }
    check_finite(values)
}

fn write_header(out: &mut Vec<u8>, h: usize, w: usize, c: usize, nnz: usize) {
    for field in [h, w, c, nnz] {
        out.extend_from_slice(&(field as u64).to_le_bytes());
    }
}

fn read_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize, &[u8])> {
    if bytes.len() < 32 {
        return Err(Error::malformed("container shorter than its 32-byte header"));
    }
    let field = |i: usize| -> Result<usize> {
        let raw = u64::from_le_bytes(bytes[i * 8..(i + 1) * 8].try_into().unwrap());
        usize::try_from(raw).map_err(|_| Error::malformed("header field exceeds usize"))
    };
    Ok((field(0)?, field(1)?, field(2)?, field(3)?, &bytes[32..]))
}

fn read_f32s(body: &[u8], count: usize) -> Result<Vec<f32>> {
    if body.len() != count * 4 {
        return Err(Error::malformed(format!(
            "expected {} value bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

/// Keeps exactly the cells with at least one non-zero channel.
pub fn from_dense(d: &DensePseudoimage) -> Result<SparsePseudoimage> {
    check_finite(&d.values)?;
    let c = d.channels;
    let mut coords = Vec::new();
    let mut values = Vec::new();
    if c > 0 {
        for (cell, chunk) in d.values.chunks_exact(c).enumerate() {
            if chunk.iter().any(|&v| v != 0.0) {
                coords.push(Coord::new((cell / d.width) as u32, (cell % d.width) as u32));
                values.extend_from_slice(chunk);
            }
        }
    }
    Ok(SparsePseudoimage::from_raw(d.height, d.width, c, coords, values))
}

pub fn to_dense(s: &SparsePseudoimage) -> DensePseudoimage {
    let c = s.channels;
    let mut values = vec![0.0f32; s.height * s.width * c];
    for (coord, site) in s.iter() {
        let start = (coord.row as usize * s.width + coord.col as usize) * c;
        values[start..start + c].copy_from_slice(site);
    }
    DensePseudoimage::from_raw(s.height, s.width, c, values)
}

/// Sorts sites row-major, permuting their values along. Duplicate
/// coordinates are rejected.
pub fn canonicalize(
    height: usize,
    width: usize,
    channels: usize,
    coords: Vec<Coord>,
    values: Vec<f32>,
) -> Result<SparsePseudoimage> {
    check_parts(height, width, channels, &coords, &values)?;
    if coords.windows(2).all(|p| p[0] < p[1]) {
        return Ok(SparsePseudoimage::from_raw(height, width, channels, coords, values));
    }
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_unstable_by_key(|&i| coords[i]);
    if let Some(p) = order.windows(2).find(|p| coords[p[0]] == coords[p[1]]) {
        let dup = coords[p[0]];
        return Err(Error::malformed(format!(
            "duplicate coordinate ({}, {})",
            dup.row, dup.col
        )));
    }
    let sorted_coords = order.iter().map(|&i| coords[i]).collect();
    let mut sorted_values = Vec::with_capacity(values.len());
    for &i in &order {
        sorted_values.extend_from_slice(&values[i * channels..(i + 1) * channels]);
    }
    Ok(SparsePseudoimage::from_raw(height, width, channels, sorted_coords, sorted_values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    /// Stored sites over grid area.
    pub site_density: f64,
    /// Sites with at least one non-zero channel over grid area.
    pub value_density: f64,
}

pub fn density(s: &SparsePseudoimage) -> DensityReport {
    let area = (s.height * s.width) as f64;
    if area == 0.0 {
        return DensityReport { site_density: 0.0, value_density: 0.0 };
    }
    let nonzero = s.iter().filter(|(_, v)| v.iter().any(|&x| x != 0.0)).count();
    DensityReport {
        site_density: s.nnz() as f64 / area,
        value_density: nonzero as f64 / area,
    }
}
