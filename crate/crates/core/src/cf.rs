//! Closed-form matting Laplacian over `k × k × k` voxel windows.
//!
//! For every complete window `w` with intensity mean `μ` and population
//! variance `σ²`, each voxel pair `(i, j)` in `w` receives
//!
//! ```text
//! δ_ij − (1/k³) · ( (I_i − μ)(I_j − μ) / (σ² + ε/k³) + 1 )
//! ```
//!
//! and `L(p, q)` is the sum over all windows holding both voxels. Only windows
//! fully inside the volume are used.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseSymMatrix;
use crate::volume::{Unit, VolumeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfParams {
    pub window_k: usize,
    pub epsilon: f64,
}

impl Default for CfParams {
    fn default() -> Self {
        CfParams {
            window_k: 3,
            epsilon: 1e-7,
        }
    }
}

impl CfParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_k < 3 || self.window_k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "window size {} must be odd and at least 3",
                self.window_k
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Mean and population variance of the `k³` window starting at `origin`.
pub fn window_stats(vol: &VolumeGrid, origin: [usize; 3], k: usize) -> Result<(f64, f64)> {
    let dims = vol.dims();
    if k == 0 || (0..3).any(|a| origin[a] + k > dims[a]) {
        return Err(Error::Index(format!(
            "window at {origin:?} of size {k} exceeds dims {dims:?}"
        )));
    }
    Ok(stats_unchecked(vol, origin, k))
}

fn stats_unchecked(vol: &VolumeGrid, origin: [usize; 3], k: usize) -> (f64, f64) {
    let count = (k * k * k) as f64;
    let mut sum = 0.0;
    for z in origin[2]..origin[2] + k {
        for y in origin[1]..origin[1] + k {
            for x in origin[0]..origin[0] + k {
                sum += vol.at(x, y, z) as f64;
            }
        }
    }
    let mu = sum / count;
    let mut ss = 0.0;
    for z in origin[2]..origin[2] + k {
        for y in origin[1]..origin[1] + k {
            for x in origin[0]..origin[0] + k {
                let d = vol.at(x, y, z) as f64 - mu;
                ss += d * d;
            }
        }
    }
    (mu, ss / count)
}

/// Per-window mean and `1 / (σ² + ε/k³)`, windows in x-fastest origin order.
struct WindowTable {
    counts: [usize; 3],
    mu: Vec<f64>,
    inv: Vec<f64>,
}

impl WindowTable {
    fn build(vol: &VolumeGrid, params: &CfParams, parallel: bool) -> Self {
        let k = params.window_k;
        let dims = vol.dims();
        let counts = [0, 1, 2].map(|a| dims[a] - k + 1);
        let total = counts[0] * counts[1] * counts[2];
        let reg = params.epsilon / (k * k * k) as f64;
        let stat = |w: usize| {
            let o = [w % counts[0], (w / counts[0]) % counts[1], w / (counts[0] * counts[1])];
            let (mu, var) = stats_unchecked(vol, o, k);
            (mu, 1.0 / (var + reg))
        };
        let pairs: Vec<(f64, f64)> = if parallel {
            (0..total).into_par_iter().map(stat).collect()
        } else {
            (0..total).map(stat).collect()
        };
        let (mu, inv) = pairs.into_iter().unzip();
        WindowTable { counts, mu, inv }
    }

    #[inline]
    fn index(&self, o: [usize; 3]) -> usize {
        o[0] + self.counts[0] * (o[1] + self.counts[1] * o[2])
    }
}

/// Builds the closed-form matting Laplacian of a normalized volume.
///
/// Rows are assembled independently: row `p` sums, for every window holding
/// `p` in x-fastest window order, the contributions to each column. The
/// summation order of every entry is therefore fixed, and serial and
/// parallel builds agree bitwise.
pub fn build_cf_laplacian(vol: &VolumeGrid, params: &CfParams) -> Result<SparseSymMatrix> {
    build_cf_laplacian_with(vol, params, true)
}

pub fn build_cf_laplacian_serial(vol: &VolumeGrid, params: &CfParams) -> Result<SparseSymMatrix> {
    build_cf_laplacian_with(vol, params, false)
}

fn build_cf_laplacian_with(vol: &VolumeGrid, params: &CfParams, parallel: bool) -> Result<SparseSymMatrix> {
    params.validate()?;
    if vol.unit != Unit::Normalized {
        return Err(Error::InvalidArgument(
            "closed-form Laplacian expects a normalized volume".into(),
        ));
    }
    let dims = vol.dims();
    let k = params.window_k;
    if dims.iter().any(|&d| d < k) {
        return Err(Error::VolumeTooSmall { dims, window: k });
    }
    let table = WindowTable::build(vol, params, parallel);
    let geom = vol.geom;
    let n = geom.len();
    let inv_count = 1.0 / (k * k * k) as f64;

    // Row p couples with every voxel within Chebyshev distance k-1; each such
    // pair shares at least one complete window.
    let axis_range = |p: usize, a: usize| (p.saturating_sub(k - 1), (p + k - 1).min(dims[a] - 1));

    let row_len = |p: usize| {
        let c = geom.coords(p);
        (0..3)
            .map(|a| {
                let (lo, hi) = axis_range(c[a], a);
                hi - lo + 1
            })
            .product::<usize>()
    };
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0usize);
    for p in 0..n {
        row_ptr.push(row_ptr[p] + row_len(p));
    }
    let nnz = row_ptr[n];
    let mut cols = vec![0usize; nnz];
    let mut vals = vec![0.0f64; nnz];

    let fill_row = |p: usize, rcols: &mut [usize], rvals: &mut [f64]| {
        let c = geom.coords(p);
        let r = [0, 1, 2].map(|a| axis_range(c[a], a));
        let len = [0, 1, 2].map(|a| r[a].1 - r[a].0 + 1);
        let mut slot = 0;
        for z in r[2].0..=r[2].1 {
            for y in r[1].0..=r[1].1 {
                for x in r[0].0..=r[0].1 {
                    rcols[slot] = geom.index(x, y, z);
                    slot += 1;
                }
            }
        }
        let ip = vol.values[p] as f64;
        // window origins containing p, per axis
        let o_range = [0, 1, 2].map(|a| (c[a].saturating_sub(k - 1), c[a].min(dims[a] - k)));
        for oz in o_range[2].0..=o_range[2].1 {
            for oy in o_range[1].0..=o_range[1].1 {
                for ox in o_range[0].0..=o_range[0].1 {
                    let w = table.index([ox, oy, oz]);
                    let mu = table.mu[w];
                    let inv = table.inv[w];
                    let dp = ip - mu;
                    for z in oz..oz + k {
                        let sz = (z - r[2].0) * len[1] * len[0];
                        for y in oy..oy + k {
                            let sy = sz + (y - r[1].0) * len[0];
                            let base = geom.index(0, y, z);
                            for x in ox..ox + k {
                                let q = base + x;
                                let delta = if q == p { 1.0 } else { 0.0 };
                                let ij = vol.values[q] as f64 - mu;
                                // (dp * ij) is commutative in p, q: keeps L exactly symmetric
                                rvals[sy + (x - r[0].0)] += delta - inv_count * (inv * (dp * ij) + 1.0);
                            }
                        }
                    }
                }
            }
        }
    };

    if parallel {
        let mut col_chunks = split_rows(&mut cols, &row_ptr);
        let mut val_chunks = split_rows(&mut vals, &row_ptr);
        col_chunks
            .par_iter_mut()
            .zip(val_chunks.par_iter_mut())
            .enumerate()
            .for_each(|(p, (rc, rv))| fill_row(p, rc, rv));
    } else {
        for p in 0..n {
            let (a, b) = (row_ptr[p], row_ptr[p + 1]);
            fill_row(p, &mut cols[a..b], &mut vals[a..b]);
        }
    }
    SparseSymMatrix::from_csr(n, row_ptr, cols, vals)
}

fn split_rows<'a, T>(mut data: &'a mut [T], row_ptr: &[usize]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(row_ptr.len() - 1);
    for w in row_ptr.windows(2) {
        let (head, tail) = data.split_at_mut(w[1] - w[0]);
        out.push(head);
        data = tail;
    }
    out
}
