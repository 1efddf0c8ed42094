//! Matting quality metrics adapted to volumes: SAD, MSE, gradient error and
//! connectivity error, the union-weighted alpha/gradient losses, and
//! `mean(±std)` aggregation.
//!
//! The 3D gradient and connectivity errors are reconstructions of the 2D
//! definitions: Gaussian-derivative filtering along each of the three axes,
//! and 26-connected components in place of 8-connected ones.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{AlphaMatte, Geometry, LabelMask};

pub const DEFAULT_GRAD_SIGMA: f64 = 1.4;
pub const DEFAULT_CONN_STEP: f64 = 0.1;
pub const DEFAULT_CONN_DELTA: f64 = 0.15;

/// Display scale factors: SAD, Grad. and Conn. ×10⁻², MSE ×10³.
pub const SAD_SCALE: f64 = 1e-2;
pub const MSE_SCALE: f64 = 1e3;
pub const GRAD_SCALE: f64 = 1e-2;
pub const CONN_SCALE: f64 = 1e-2;

fn check_pair(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<()> {
    pred.geom.ensure_same(&gt.geom, "prediction and ground truth")
}

fn diffs<'a>(pred: &'a AlphaMatte, gt: &'a AlphaMatte) -> impl Iterator<Item = f64> + 'a {
    pred.values.iter().zip(&gt.values).map(|(&p, &g)| p as f64 - g as f64)
}

pub fn sad(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(diffs(pred, gt).map(f64::abs).sum())
}

pub fn mse(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(diffs(pred, gt).map(|d| d * d).sum::<f64>() / pred.len() as f64)
}

/// Gaussian and first-derivative-of-Gaussian taps for offsets `0..=radius`.
/// The smoothing taps sum to 1; the derivative taps give unit response on a
/// unit-slope ramp.
fn gaussian_taps(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let radius = (3.0 * sigma).ceil() as usize;
    let g: Vec<f64> = (0..=radius)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = g[0] + 2.0 * g[1..].iter().sum::<f64>();
    let smooth: Vec<f64> = g.iter().map(|v| v / total).collect();
    let moment: f64 = 2.0 * (1..=radius).map(|t| (t * t) as f64 * g[t]).sum::<f64>();
    let deriv: Vec<f64> = (0..=radius).map(|t| t as f64 * g[t] / moment).collect();
    (smooth, deriv)
}

/// 1D edge-clamped convolution along `axis`. Taps are applied in mirrored
/// pairs: `even` combines `f(x−t) + f(x+t)`, odd combines `f(x+t) − f(x−t)`,
/// so constants map exactly to themselves or to zero.
fn convolve_axis(geom: &Geometry, src: &[f64], axis: usize, taps: &[f64], odd: bool) -> Vec<f64> {
    let dims = geom.dims;
    let n = dims[axis] as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = vec![0.0; src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = geom.coords(i)[axis] as i64;
        let base = i - pos as usize * stride;
        let at = |p: i64| src[base + p.clamp(0, n - 1) as usize * stride];
        let mut acc = if odd { 0.0 } else { taps[0] * src[i] };
        for (t, &w) in taps.iter().enumerate().skip(1) {
            let t = t as i64;
            acc += if odd {
                w * (at(pos + t) - at(pos - t))
            } else {
                w * (at(pos - t) + at(pos + t))
            };
        }
        *o = acc;
    }
    out
}

/// Gaussian-derivative response of `field` along `axis` (smoothing along the
/// other two axes).
pub fn gaussian_gradient(geom: &Geometry, field: &[f64], axis: usize, sigma: f64) -> Vec<f64> {
    let (smooth, deriv) = gaussian_taps(sigma);
    let mut cur = field.to_vec();
    for a in 0..3 {
        cur = if a == axis {
            convolve_axis(geom, &cur, a, &deriv, true)
        } else {
            convolve_axis(geom, &cur, a, &smooth, false)
        };
    }
    cur
}

/// Sum over voxels and axes of the squared Gaussian-derivative difference.
pub fn grad_error(pred: &AlphaMatte, gt: &AlphaMatte, sigma_vox: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if !(sigma_vox > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma {sigma_vox} must be positive")));
    }
    // filtering is linear, so filter the difference once
    let d: Vec<f64> = diffs(pred, gt).collect();
    Ok((0..3)
        .map(|axis| {
            gaussian_gradient(&pred.geom, &d, axis, sigma_vox)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        })
        .sum())
}

const NEIGHBORS_26: usize = 26;

fn neighbor_offsets() -> [[i64; 3]; NEIGHBORS_26] {
    let mut out = [[0i64; 3]; NEIGHBORS_26];
    let mut k = 0;
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    out[k] = [dx, dy, dz];
                    k += 1;
                }
            }
        }
    }
    out
}

/// Marks every voxel of `inside` 26-connected to a seed (seeds must be inside).
fn flood_fill(geom: &Geometry, inside: &[bool], seeds: impl Iterator<Item = usize>) -> Vec<bool> {
    let offsets = neighbor_offsets();
    let mut reached = vec![false; inside.len()];
    let mut queue = VecDeque::new();
    for s in seeds {
        if inside[s] && !reached[s] {
            reached[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let c = geom.coords(i);
        for off in &offsets {
            let p = [c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]];
            if geom.contains(p) {
                let j = geom.index(p[0] as usize, p[1] as usize, p[2] as usize);
                if inside[j] && !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    reached
}

/// Largest 26-connected component of `inside`; ties go to the component
/// found first in linear order.
pub fn largest_component(geom: &Geometry, inside: &[bool]) -> Vec<bool> {
    let offsets = neighbor_offsets();
    let mut label = vec![0u32; inside.len()];
    let mut queue = VecDeque::new();
    let mut next = 0u32;
    let (mut best, mut best_size) = (0u32, 0usize);
    for start in 0..inside.len() {
        if !inside[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let c = geom.coords(i);
            for off in &offsets {
                let p = [c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]];
                if geom.contains(p) {
                    let j = geom.index(p[0] as usize, p[1] as usize, p[2] as usize);
                    if inside[j] && label[j] == 0 {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        if size > best_size {
            best_size = size;
            best = next;
        }
    }
    label.iter().map(|&l| best != 0 && l == best).collect()
}

/// Connectivity-error parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnParams {
    pub theta_step: f64,
    pub delta: f64,
}

impl Default for ConnParams {
    fn default() -> Self {
        ConnParams {
            theta_step: DEFAULT_CONN_STEP,
            delta: DEFAULT_CONN_DELTA,
        }
    }
}

fn threshold_levels(step: f64) -> Vec<f64> {
    let count = (1.0 / step + 1e-9).floor() as usize;
    (0..=count).map(|k| k as f64 * step).collect()
}

/// `φ_i(m) = 1 − d_i·[d_i ≥ δ]` with `d_i = m_i − l_i`, where `l_i` is the
/// highest threshold at which voxel `i` stays 26-connected to the source.
fn connectivity_phi(m: &AlphaMatte, source: &[bool], p: &ConnParams) -> Vec<f64> {
    let geom = &m.geom;
    let mut level = vec![0.0f64; m.len()];
    for theta in threshold_levels(p.theta_step) {
        let inside: Vec<bool> = m.values.iter().map(|&v| v as f64 >= theta).collect();
        let seeds = (0..m.len()).filter(|&i| source[i]);
        let reached = flood_fill(geom, &inside, seeds);
        for (l, &r) in level.iter_mut().zip(&reached) {
            if r {
                *l = theta;
            }
        }
    }
    m.values
        .iter()
        .zip(&level)
        .map(|(&v, &l)| {
            let d = v as f64 - l;
            if d >= p.delta {
                1.0 - d
            } else {
                1.0
            }
        })
        .collect()
}

/// 26-connected connectivity error. Falls back to SAD when the source region
/// (largest component where both mattes reach `1 − θ_step`) is empty.
pub fn conn_error(pred: &AlphaMatte, gt: &AlphaMatte, params: &ConnParams) -> Result<f64> {
    check_pair(pred, gt)?;
    if !(params.theta_step > 0.0 && params.theta_step <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold step {} must lie in (0, 1]",
            params.theta_step
        )));
    }
    let top = 1.0 - params.theta_step;
    let strong: Vec<bool> = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(&a, &b)| (a.min(b) as f64) >= top)
        .collect();
    let source = largest_component(&pred.geom, &strong);
    if !source.iter().any(|&b| b) {
        return sad(pred, gt);
    }
    let phi_p = connectivity_phi(pred, &source, params);
    let phi_g = connectivity_phi(gt, &source, params);
    Ok(phi_p.iter().zip(&phi_g).map(|(a, b)| (a - b).abs()).sum())
}

fn union_weights<'a>(union_mask: &'a LabelMask) -> impl Iterator<Item = f64> + 'a {
    union_mask.values.iter().map(|&u| if u == 1 { 2.0 } else { 1.0 })
}

/// `(1/N) Σ (1 + 𝟙_union(i)) |pred_i − gt_i|`.
pub fn weighted_alpha_loss(pred: &AlphaMatte, gt: &AlphaMatte, union_mask: &LabelMask) -> Result<f64> {
    check_pair(pred, gt)?;
    pred.geom.ensure_same(&union_mask.geom, "union mask")?;
    let total: f64 = diffs(pred, gt)
        .zip(union_weights(union_mask))
        .map(|(d, w)| w * d.abs())
        .sum();
    Ok(total / pred.len() as f64)
}

/// Central-difference gradient (one-sided on faces, zero on unit axes).
pub fn finite_gradient(geom: &Geometry, field: &[f64]) -> Vec<[f64; 3]> {
    let dims = geom.dims;
    (0..field.len())
        .map(|i| {
            let c = geom.coords(i);
            let mut g = [0.0; 3];
            for a in 0..3 {
                let n = dims[a];
                if n < 2 {
                    continue;
                }
                let stride = match a {
                    0 => 1,
                    1 => dims[0],
                    _ => dims[0] * dims[1],
                };
                g[a] = if c[a] == 0 {
                    field[i + stride] - field[i]
                } else if c[a] == n - 1 {
                    field[i] - field[i - stride]
                } else {
                    (field[i + stride] - field[i - stride]) / 2.0
                };
            }
            g
        })
        .collect()
}

/// `(1/N) Σ (1 + 𝟙_union(i)) ‖∇pred_i − ∇gt_i‖₁`.
pub fn weighted_grad_loss(pred: &AlphaMatte, gt: &AlphaMatte, union_mask: &LabelMask) -> Result<f64> {
    check_pair(pred, gt)?;
    pred.geom.ensure_same(&union_mask.geom, "union mask")?;
    let to_f64 = |m: &AlphaMatte| m.values.iter().map(|&v| v as f64).collect::<Vec<_>>();
    let gp = finite_gradient(&pred.geom, &to_f64(pred));
    let gg = finite_gradient(&gt.geom, &to_f64(gt));
    let total: f64 = gp
        .iter()
        .zip(&gg)
        .zip(union_weights(union_mask))
        .map(|((a, b), w)| w * ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Raw metric values for one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMetrics {
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
}

impl RawMetrics {
    pub fn scaled(&self) -> RawMetrics {
        RawMetrics {
            sad: self.sad * SAD_SCALE,
            mse: self.mse * MSE_SCALE,
            grad: self.grad * GRAD_SCALE,
            conn: self.conn * CONN_SCALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatteMetrics {
    pub raw: RawMetrics,
    pub scaled: RawMetrics,
}

impl MatteMetrics {
    pub fn from_raw(raw: RawMetrics) -> Self {
        MatteMetrics {
            raw,
            scaled: raw.scaled(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub grad_sigma: f64,
    pub conn: ConnParams,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            grad_sigma: DEFAULT_GRAD_SIGMA,
            conn: ConnParams::default(),
        }
    }
}

/// All four metrics for one prediction/ground-truth pair.
pub fn evaluate(pred: &AlphaMatte, gt: &AlphaMatte, opts: &MetricOptions) -> Result<MatteMetrics> {
    Ok(MatteMetrics::from_raw(RawMetrics {
        sad: sad(pred, gt)?,
        mse: mse(pred, gt)?,
        grad: grad_error(pred, gt, opts.grad_sigma)?,
        conn: conn_error(pred, gt, &opts.conn)?,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub formatted: String,
}

/// Per-metric population mean and standard deviation over cases, in raw
/// units, with the display string in scaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub cases: Vec<MatteMetrics>,
    pub sad: MetricSummary,
    pub mse: MetricSummary,
    pub grad: MetricSummary,
    pub conn: MetricSummary,
}

/// `mean(±std)` with two decimals after scaling.
pub fn format_mean_std(mean: f64, std: f64, scale: f64) -> String {
    format!("{:.2}(±{:.2})", mean * scale, std * scale)
}

fn summarize(values: &[f64], scale: f64) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    MetricSummary {
        mean,
        std,
        formatted: format_mean_std(mean, std, scale),
    }
}

pub fn aggregate(cases: &[MatteMetrics]) -> Result<AggregateReport> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("aggregate needs at least one case".into()));
    }
    let col = |f: fn(&RawMetrics) -> f64| cases.iter().map(|c| f(&c.raw)).collect::<Vec<_>>();
    Ok(AggregateReport {
        cases: cases.to_vec(),
        sad: summarize(&col(|m| m.sad), SAD_SCALE),
        mse: summarize(&col(|m| m.mse), MSE_SCALE),
        grad: summarize(&col(|m| m.grad), GRAD_SCALE),
        conn: summarize(&col(|m| m.conn), CONN_SCALE),
    })
}
