//! Core 3D grid types and geometric preprocessing.
//!
//! All grids use one flat memory order: x varies fastest, the linear index of
//! voxel `(x, y, z)` is `x + nx * (y + ny * z)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default CT observation window (lung window) in HU.
pub const LUNG_WINDOW: (f64, f64) = (-1350.0, 150.0);

/// Voxel counts and physical spacing shared by every grid type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let geom = Geometry { dims, spacing };
        geom.validate()?;
        Ok(geom)
    }

    /// Unit-spaced cube of edge `n`.
    pub fn cube(n: usize, spacing: f64) -> Self {
        Geometry {
            dims: [n, n, n],
            spacing: [spacing; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidVolume(format!(
                "dims {:?} contain a zero extent",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!(
                "spacing {:?} must be positive and finite",
                self.spacing
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    pub(crate) fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "HU")]
    Hu,
    #[serde(rename = "normalized")]
    Normalized,
}

impl Unit {
    pub fn as_str(&self) -> &'static str {
        match self {
            Unit::Hu => "HU",
            Unit::Normalized => "normalized",
        }
    }
}

/// Scalar 3D image: HU or normalized intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    pub geom: Geometry,
    pub values: Vec<f32>,
    pub unit: Unit,
}

impl VolumeGrid {
    pub fn new(geom: Geometry, values: Vec<f32>, unit: Unit) -> Result<Self> {
        geom.validate()?;
        if values.len() != geom.len() {
            return Err(Error::InvalidVolume(format!(
                "{} values for dims {:?}",
                values.len(),
                geom.dims
            )));
        }
        if unit == Unit::Normalized {
            if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidVolume(format!(
                    "normalized value {} at voxel {i} outside [0,1]",
                    values[i]
                )));
            }
        }
        Ok(VolumeGrid { geom, values, unit })
    }

    pub fn filled(geom: Geometry, value: f32, unit: Unit) -> Result<Self> {
        Self::new(geom, vec![value; geom.len()], unit)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        geom: Geometry,
        unit: Unit,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let values = (0..geom.len())
            .map(|i| {
                let [x, y, z] = geom.coords(i);
                f(x, y, z)
            })
            .collect();
        Self::new(geom, values, unit)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.geom.index(x, y, z)]
    }
}

/// Per-voxel opacity in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatte {
    pub geom: Geometry,
    pub values: Vec<f32>,
}

impl AlphaMatte {
    pub fn new(geom: Geometry, values: Vec<f32>) -> Result<Self> {
        geom.validate()?;
        if values.len() != geom.len() {
            return Err(Error::InvalidVolume(format!(
                "{} alpha values for dims {:?}",
                values.len(),
                geom.dims
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidVolume(format!(
                "alpha {} at voxel {i} outside [0,1]",
                values[i]
            )));
        }
        Ok(AlphaMatte { geom, values })
    }

    /// Clamps every value into `[0, 1]` (NaN maps to 0).
    pub fn from_unclamped(geom: Geometry, values: &[f64]) -> Result<Self> {
        let clamped = values
            .iter()
            .map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 })
            .collect();
        Self::new(geom, clamped)
    }

    pub fn filled(geom: Geometry, value: f32) -> Result<Self> {
        Self::new(geom, vec![value; geom.len()])
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Binary annotation mask with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub geom: Geometry,
    pub values: Vec<u8>,
}

impl LabelMask {
    pub fn new(geom: Geometry, values: Vec<u8>) -> Result<Self> {
        geom.validate()?;
        if values.len() != geom.len() {
            return Err(Error::InvalidVolume(format!(
                "{} mask values for dims {:?}",
                values.len(),
                geom.dims
            )));
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidVolume(format!(
                "mask value {} at voxel {i} not in {{0,1}}",
                values[i]
            )));
        }
        Ok(LabelMask { geom, values })
    }

    pub fn from_predicate(geom: Geometry, f: impl Fn(usize) -> bool) -> Result<Self> {
        Self::new(geom, (0..geom.len()).map(|i| f(i) as u8).collect())
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Mean voxel coordinate of the set voxels, `None` when the mask is empty.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for (i, &v) in self.values.iter().enumerate() {
            if v == 1 {
                let c = self.geom.coords(i);
                for a in 0..3 {
                    acc[a] += c[a] as f64;
                }
                n += 1;
            }
        }
        (n > 0).then(|| acc.map(|s| s / n as f64))
    }

    /// Inclusive `(lo, hi)` index range of set voxels along `axis`.
    pub fn extent(&self, axis: usize) -> Option<(usize, usize)> {
        let mut range: Option<(usize, usize)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if v == 1 {
                let c = self.geom.coords(i)[axis];
                range = Some(match range {
                    None => (c, c),
                    Some((lo, hi)) => (lo.min(c), hi.max(c)),
                });
            }
        }
        range
    }
}

fn resampled_geometry(geom: &Geometry, target: f64) -> Result<Geometry> {
    geom.validate()?;
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target spacing {target} must be positive"
        )));
    }
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let extent = geom.dims[a] as f64 * geom.spacing[a] / target;
        dims[a] = (extent.round() as usize).max(1);
    }
    Ok(Geometry {
        dims,
        spacing: [target; 3],
    })
}

/// Continuous input index of output voxel `i` along one axis: output voxel
/// centers are mapped through physical space, both grids anchored at the same
/// outer corner.
#[inline]
fn source_coord(i: usize, in_spacing: f64, out_spacing: f64) -> f64 {
    (i as f64 + 0.5) * out_spacing / in_spacing - 0.5
}

/// Trilinear sample at continuous index `p`, clamping to the nearest edge voxel.
pub fn sample_trilinear(geom: &Geometry, values: &[f32], p: [f64; 3]) -> f64 {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let max = (geom.dims[a] - 1) as f64;
        let c = p[a].clamp(0.0, max);
        let f = c.floor();
        lo[a] = f as usize;
        hi[a] = (lo[a] + 1).min(geom.dims[a] - 1);
        frac[a] = c - f;
    }
    let v = |x: usize, y: usize, z: usize| values[geom.index(x, y, z)] as f64;
    let [fx, fy, fz] = frac;
    let c00 = v(lo[0], lo[1], lo[2]) * (1.0 - fx) + v(hi[0], lo[1], lo[2]) * fx;
    let c10 = v(lo[0], hi[1], lo[2]) * (1.0 - fx) + v(hi[0], hi[1], lo[2]) * fx;
    let c01 = v(lo[0], lo[1], hi[2]) * (1.0 - fx) + v(hi[0], lo[1], hi[2]) * fx;
    let c11 = v(lo[0], hi[1], hi[2]) * (1.0 - fx) + v(hi[0], hi[1], hi[2]) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

fn resample_values_linear(geom: &Geometry, values: &[f32], out: &Geometry) -> Vec<f32> {
    (0..out.len())
        .into_par_iter()
        .map(|i| {
            let c = out.coords(i);
            let p = [0, 1, 2].map(|a| source_coord(c[a], geom.spacing[a], out.spacing[a]));
            sample_trilinear(geom, values, p) as f32
        })
        .collect()
}

/// Resamples to isotropic `target_spacing_mm` with trilinear interpolation.
pub fn resample_to_isotropic(vol: &VolumeGrid, target_spacing_mm: f64) -> Result<VolumeGrid> {
    let out = resampled_geometry(&vol.geom, target_spacing_mm)?;
    let mut values = resample_values_linear(&vol.geom, &vol.values, &out);
    if vol.unit == Unit::Normalized {
        // convex combinations of [0,1] inputs; guard against rounding
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    VolumeGrid::new(out, values, vol.unit)
}

/// Trilinear resampling of an alpha matte; the result stays in `[0, 1]`.
pub fn resample_alpha_to_isotropic(alpha: &AlphaMatte, target_spacing_mm: f64) -> Result<AlphaMatte> {
    let out = resampled_geometry(&alpha.geom, target_spacing_mm)?;
    let values = resample_values_linear(&alpha.geom, &alpha.values, &out)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    AlphaMatte::new(out, values)
}

/// Nearest-neighbour resampling so label fields stay binary.
pub fn resample_mask_to_isotropic(mask: &LabelMask, target_spacing_mm: f64) -> Result<LabelMask> {
    let geom = &mask.geom;
    let out = resampled_geometry(geom, target_spacing_mm)?;
    let values = (0..out.len())
        .map(|i| {
            let c = out.coords(i);
            let mut src = [0usize; 3];
            for a in 0..3 {
                let p = source_coord(c[a], geom.spacing[a], out.spacing[a]);
                let max = (geom.dims[a] - 1) as f64;
                src[a] = (p + 0.5).floor().clamp(0.0, max) as usize;
            }
            mask.values[geom.index(src[0], src[1], src[2])]
        })
        .collect();
    LabelMask::new(out, values)
}

/// Crop box: a transverse `xy_size` square around `center` and the object
/// slice range `[z_lo, z_hi]` extended by `z_pad` slices at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub center: [usize; 3],
    pub xy_size: usize,
    pub z_lo: usize,
    pub z_hi: usize,
    pub z_pad: usize,
}

impl CropBox {
    /// Inclusive-exclusive source index range along each axis (may extend
    /// outside the source grid).
    pub fn ranges(&self) -> [(i64, i64); 3] {
        let half = (self.xy_size / 2) as i64;
        let x0 = self.center[0] as i64 - half;
        let y0 = self.center[1] as i64 - half;
        let z0 = self.z_lo as i64 - self.z_pad as i64;
        let z1 = self.z_hi as i64 + self.z_pad as i64 + 1;
        [
            (x0, x0 + self.xy_size as i64),
            (y0, y0 + self.xy_size as i64),
            (z0, z1),
        ]
    }

    fn check(&self, geom: &Geometry) -> Result<Geometry> {
        if self.xy_size == 0 {
            return Err(Error::InvalidArgument("xy_size must be positive".into()));
        }
        if self.z_lo > self.z_hi {
            return Err(Error::InvalidArgument(format!(
                "z_lo {} above z_hi {}",
                self.z_lo, self.z_hi
            )));
        }
        if !geom.contains(self.center.map(|c| c as i64)) {
            return Err(Error::Index(format!(
                "crop center {:?} outside dims {:?}",
                self.center, geom.dims
            )));
        }
        let r = self.ranges();
        Ok(Geometry {
            dims: r.map(|(lo, hi)| (hi - lo) as usize),
            spacing: geom.spacing,
        })
    }
}

fn crop_values<T: Copy>(geom: &Geometry, values: &[T], out: &Geometry, b: &CropBox, fill: T) -> Vec<T> {
    let r = b.ranges();
    let mut result = Vec::with_capacity(out.len());
    for z in r[2].0..r[2].1 {
        for y in r[1].0..r[1].1 {
            for x in r[0].0..r[0].1 {
                let p = [x, y, z];
                result.push(if geom.contains(p) {
                    values[geom.index(x as usize, y as usize, z as usize)]
                } else {
                    fill
                });
            }
        }
    }
    result
}

/// Crops `vol` to `b`, filling voxels outside the source with `fill_value`.
pub fn crop_centered(vol: &VolumeGrid, b: &CropBox, fill_value: f32) -> Result<VolumeGrid> {
    let out = b.check(&vol.geom)?;
    let values = crop_values(&vol.geom, &vol.values, &out, b, fill_value);
    VolumeGrid::new(out, values, vol.unit)
}

pub fn crop_mask(mask: &LabelMask, b: &CropBox) -> Result<LabelMask> {
    let out = b.check(&mask.geom)?;
    LabelMask::new(out, crop_values(&mask.geom, &mask.values, &out, b, 0))
}

pub fn crop_alpha(alpha: &AlphaMatte, b: &CropBox) -> Result<AlphaMatte> {
    let out = b.check(&alpha.geom)?;
    AlphaMatte::new(out, crop_values(&alpha.geom, &alpha.values, &out, b, 0.0))
}

/// Linear map of `[w_min, w_max]` onto `[0, 1]`, clamped.
#[inline]
pub fn window_value(v: f64, w_min: f64, w_max: f64) -> f64 {
    ((v - w_min) / (w_max - w_min)).clamp(0.0, 1.0)
}

/// Maps HU values through the `[w_min, w_max]` window into a normalized volume.
pub fn clamp_window(vol: &VolumeGrid, w_min: f64, w_max: f64) -> Result<VolumeGrid> {
    if !(w_min < w_max) {
        return Err(Error::InvalidArgument(format!(
            "window min {w_min} must be below max {w_max}"
        )));
    }
    let values = vol
        .values
        .iter()
        .map(|&v| window_value(v as f64, w_min, w_max) as f32)
        .collect();
    VolumeGrid::new(vol.geom, values, Unit::Normalized)
}
