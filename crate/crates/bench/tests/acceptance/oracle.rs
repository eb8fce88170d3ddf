//! 64-bit reference convolutions written directly from the definitions.

use spp_core::conv::Kernel;
use spp_core::tensor::{Coord, DensePseudoimage, SparsePseudoimage};

#[derive(Debug, Clone)]
pub struct Grid64 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub v: Vec<f64>,
}

impl Grid64 {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Grid64 { h, w, c, v: vec![0.0; h * w * c] }
    }

    pub fn from_sparse(s: &SparsePseudoimage) -> Self {
        let mut g = Grid64::zeros(s.height(), s.width(), s.channels());
        for (i, coord) in s.coords().iter().enumerate() {
            let base = (coord.row as usize * g.w + coord.col as usize) * g.c;
            for (o, &x) in g.v[base..base + g.c].iter_mut().zip(s.site(i)) {
                *o = x as f64;
            }
        }
        g
    }

    /// Reshapes to `h × w × c` and zeroes, keeping the allocation.
    pub fn reset(&mut self, h: usize, w: usize, c: usize) {
        (self.h, self.w, self.c) = (h, w, c);
        self.v.clear();
        self.v.resize(h * w * c, 0.0);
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let base = (r * self.w + c) * self.c;
        &self.v[base..base + self.c]
    }

    fn cell_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let base = (r * self.w + c) * self.c;
        &mut self.v[base..base + self.c]
    }
}

fn taps64(k: &Kernel) -> Vec<f64> {
    k.data().iter().map(|&x| x as f64).collect()
}

fn accumulate(acc: &mut [f64], x: &[f64], tap: &[f64]) {
    let cout = acc.len();
    for (ci, &a) in x.iter().enumerate() {
        if a != 0.0 {
            for (o, &kv) in acc.iter_mut().zip(&tap[ci * cout..(ci + 1) * cout]) {
                *o += a * kv;
            }
        }
    }
}

/// `y[o] = Σ_t K[t] · x[o·s + t − p]`: zero padding `(k−1)/2` for odd `k`,
/// none for even `k` (which must tile the grid exactly).
pub fn conv_forward(x: &Grid64, k: &Kernel, stride: usize, y: &mut Grid64) {
    let n = k.kh();
    let pad = if n % 2 == 1 { (n - 1) / 2 } else { 0 };
    let out_dim = |d: usize| (d + 2 * pad - n) / stride + 1;
    let (oh, ow) = (out_dim(x.h), out_dim(x.w));
    let taps = taps64(k);
    let tap_len = k.cin() * k.cout();
    y.reset(oh, ow, k.cout());
    for iy in 0..x.h {
        for ix in 0..x.w {
            let v = x.cell(iy, ix);
            if v.iter().all(|&a| a == 0.0) {
                continue;
            }
            for ky in 0..n {
                let ty = iy as isize + pad as isize - ky as isize;
                if ty < 0 || ty as usize % stride != 0 || ty as usize / stride >= oh {
                    continue;
                }
                for kx in 0..n {
                    let tx = ix as isize + pad as isize - kx as isize;
                    if tx < 0 || tx as usize % stride != 0 || tx as usize / stride >= ow {
                        continue;
                    }
                    let t = (ky * n + kx) * tap_len;
                    accumulate(y.cell_mut(ty as usize / stride, tx as usize / stride), v, &taps[t..t + tap_len]);
                }
            }
        }
    }
}

/// `y[i·s + t] = K[t] · x[i]` for `k = s`.
pub fn conv_transpose(x: &Grid64, k: &Kernel, stride: usize, y: &mut Grid64) {
    let taps = taps64(k);
    let tap_len = k.cin() * k.cout();
    y.reset(x.h * stride, x.w * stride, k.cout());
    for iy in 0..x.h {
        for ix in 0..x.w {
            let v = x.cell(iy, ix);
            if v.iter().all(|&a| a == 0.0) {
                continue;
            }
            for ky in 0..stride {
                for kx in 0..stride {
                    let t = (ky * stride + kx) * tap_len;
                    accumulate(y.cell_mut(iy * stride + ky, ix * stride + kx), v, &taps[t..t + tap_len]);
                }
            }
        }
    }
}

/// Stride-1 padded convolution evaluated only at `sites`, reading only
/// inputs at `sites`.
pub fn conv_masked(x: &Grid64, k: &Kernel, sites: &[Coord]) -> Vec<Vec<f64>> {
    let n = k.kh() as isize;
    let pad = (n - 1) / 2;
    let taps = taps64(k);
    let tap_len = k.cin() * k.cout();
    let mut active = vec![false; x.h * x.w];
    for s in sites {
        active[s.row as usize * x.w + s.col as usize] = true;
    }
    sites
        .iter()
        .map(|s| {
            let mut acc = vec![0.0; k.cout()];
            for ky in 0..n {
                for kx in 0..n {
                    let (r, c) = (s.row as isize + ky - pad, s.col as isize + kx - pad);
                    if r < 0 || c < 0 || r >= x.h as isize || c >= x.w as isize {
                        continue;
                    }
                    if !active[r as usize * x.w + c as usize] {
                        continue;
                    }
                    let t = (ky * n + kx) as usize * tap_len;
                    accumulate(&mut acc, x.cell(r as usize, c as usize), &taps[t..t + tap_len]);
                }
            }
            acc
        })
        .collect()
}

/// Largest deviation of a sparse result from the oracle, counting every
/// cell the result leaves unstored as zero.
pub fn max_abs_diff(oracle: &Grid64, got: &SparsePseudoimage) -> f64 {
    assert_eq!((oracle.h, oracle.w, oracle.c), (got.height(), got.width(), got.channels()), "output shape");
    let mut stored = vec![false; oracle.h * oracle.w];
    let mut worst = 0.0f64;
    for (coord, values) in got.iter() {
        let (r, c) = (coord.row as usize, coord.col as usize);
        stored[r * oracle.w + c] = true;
        for (&a, &b) in oracle.cell(r, c).iter().zip(values) {
            worst = worst.max((a - b as f64).abs());
        }
    }
    for (i, cell) in oracle.v.chunks_exact(oracle.c.max(1)).enumerate() {
        if !stored[i] {
            worst = cell.iter().fold(worst, |m, &a| m.max(a.abs()));
        }
    }
    worst
}

pub fn max_abs_diff_dense(a: &DensePseudoimage, b: &DensePseudoimage) -> f64 {
    assert_eq!((a.height(), a.width(), a.channels()), (b.height(), b.width(), b.channels()), "output shape");
    a.values().iter().zip(b.values()).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
}
