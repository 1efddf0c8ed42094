//! Multi-annotator mask fusion, trimap construction and the `(S, D, λ)`
//! constraint triple fed to the matting solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{window_value, Geometry, LabelMask, Unit, VolumeGrid, LUNG_WINDOW};

pub const DEFAULT_DILATE_RADIUS: usize = 3;
pub const DEFAULT_LAMBDA: f64 = 100.0;

/// Trimap label, encoded on disk as BG=0, UNK=1, FG=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Unknown = 1,
    Foreground = 2,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Background),
            1 => Some(Label::Unknown),
            2 => Some(Label::Foreground),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimap {
    pub geom: Geometry,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub foreground: usize,
    pub unknown: usize,
    pub background: usize,
}

impl Trimap {
    pub fn new(geom: Geometry, labels: Vec<Label>) -> Result<Self> {
        geom.validate()?;
        if labels.len() != geom.len() {
            return Err(Error::InvalidVolume(format!(
                "{} labels for dims {:?}",
                labels.len(),
                geom.dims
            )));
        }
        Ok(Trimap { geom, labels })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for l in &self.labels {
            match l {
                Label::Foreground => c.foreground += 1,
                Label::Unknown => c.unknown += 1,
                Label::Background => c.background += 1,
            }
        }
        c
    }

    pub fn mask_of(&self, label: Label) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }
}

/// The `(S, D, λ)` triple: target values, constraint indicator and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftConstraint {
    pub s_values: Vec<f64>,
    pub constrained: Vec<bool>,
    pub lambda: f64,
}

impl SoftConstraint {
    pub fn len(&self) -> usize {
        self.s_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_values.is_empty()
    }

    pub fn constrained_count(&self) -> usize {
        self.constrained.iter().filter(|&&c| c).count()
    }
}

/// HU calibration of foreground constraints.
///
/// Foreground voxels inside `[l_low, l_high]` count as pure lesion (α = 1);
/// below `l_low` the linear ramp `q` over the window applies; above `l_high`
/// the mapping `p` is the constant 1. The default places `l_low` at the
/// window top and leaves `l_high` unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuCalibration {
    pub l_low: f64,
    pub l_high: f64,
    pub window: (f64, f64),
}

impl HuCalibration {
    pub fn from_window(w_min: f64, w_max: f64) -> Result<Self> {
        if !(w_min < w_max) {
            return Err(Error::InvalidArgument(format!(
                "window min {w_min} must be below max {w_max}"
            )));
        }
        Ok(HuCalibration {
            l_low: w_max,
            l_high: f64::INFINITY,
            window: (w_min, w_max),
        })
    }

    /// Calibrated foreground alpha for intensity `hu`.
    pub fn foreground_alpha(&self, hu: f64) -> f64 {
        // p ≡ 1 above l_high and on [l_low, l_high] alike
        if hu >= self.l_low {
            1.0
        } else {
            window_value(hu, self.window.0, self.window.1)
        }
    }
}

impl Default for HuCalibration {
    fn default() -> Self {
        HuCalibration::from_window(LUNG_WINDOW.0, LUNG_WINDOW.1).unwrap()
    }
}

/// Voxelwise intersection and union of two or more annotator masks.
pub fn fuse_masks(masks: &[LabelMask]) -> Result<(LabelMask, LabelMask)> {
    if masks.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "mask fusion needs at least 2 masks, got {}",
            masks.len()
        )));
    }
    let geom = masks[0].geom;
    for m in &masks[1..] {
        geom.ensure_same(&m.geom, "mask fusion")?;
    }
    let mut overlap = masks[0].values.clone();
    let mut union = masks[0].values.clone();
    for m in &masks[1..] {
        for ((o, u), &v) in overlap.iter_mut().zip(union.iter_mut()).zip(&m.values) {
            *o &= v;
            *u |= v;
        }
    }
    Ok((LabelMask::new(geom, overlap)?, LabelMask::new(geom, union)?))
}

/// Integer offsets of the Euclidean voxel ball of the given radius.
pub fn ball_offsets(radius: usize) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// FG = overlap, BG = outside the union, UNK elsewhere; UNK then grows by a
/// Euclidean ball of `dilate_radius_vox` voxels.
pub fn build_trimap(overlap: &LabelMask, union: &LabelMask, dilate_radius_vox: usize) -> Result<Trimap> {
    let geom = overlap.geom;
    geom.ensure_same(&union.geom, "trimap masks")?;
    if let Some(i) = overlap
        .values
        .iter()
        .zip(&union.values)
        .position(|(&o, &u)| o == 1 && u == 0)
    {
        return Err(Error::Inconsistent(format!(
            "overlap voxel {i} lies outside the union"
        )));
    }
    let initial: Vec<Label> = overlap
        .values
        .iter()
        .zip(&union.values)
        .map(|(&o, &u)| match (o, u) {
            (1, _) => Label::Foreground,
            (_, 0) => Label::Background,
            _ => Label::Unknown,
        })
        .collect();

    let mut labels = initial.clone();
    if dilate_radius_vox > 0 {
        let ball = ball_offsets(dilate_radius_vox);
        for (i, &l) in initial.iter().enumerate() {
            if l != Label::Unknown {
                continue;
            }
            let c = geom.coords(i);
            for off in &ball {
                let p = [c[0] as i64 + off[0], c[1] as i64 + off[1], c[2] as i64 + off[2]];
                if geom.contains(p) {
                    let j = geom.index(p[0] as usize, p[1] as usize, p[2] as usize);
                    labels[j] = Label::Unknown;
                }
            }
        }
    }
    Trimap::new(geom, labels)
}

/// Hard constraints: 1 on FG, 0 on BG, free on UNK.
pub fn binary_constraints(trimap: &Trimap, lambda: f64) -> Result<SoftConstraint> {
    check_lambda(lambda)?;
    let s_values = trimap
        .labels
        .iter()
        .map(|l| if *l == Label::Foreground { 1.0 } else { 0.0 })
        .collect();
    Ok(SoftConstraint {
        s_values,
        constrained: trimap.labels.iter().map(|&l| l != Label::Unknown).collect(),
        lambda,
    })
}

/// FG targets follow the HU calibration instead of a flat 1; BG stays 0.
pub fn hu_calibrated_constraints(
    vol: &VolumeGrid,
    trimap: &Trimap,
    calib: &HuCalibration,
    lambda: f64,
) -> Result<SoftConstraint> {
    check_lambda(lambda)?;
    if vol.unit != Unit::Hu {
        return Err(Error::InvalidArgument(
            "HU calibration requires a volume in HU".into(),
        ));
    }
    vol.geom.ensure_same(&trimap.geom, "calibrated constraints")?;
    let s_values = trimap
        .labels
        .iter()
        .zip(&vol.values)
        .map(|(l, &hu)| match l {
            Label::Foreground => calib.foreground_alpha(hu as f64),
            _ => 0.0,
        })
        .collect();
    Ok(SoftConstraint {
        s_values,
        constrained: trimap.labels.iter().map(|&l| l != Label::Unknown).collect(),
        lambda,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "constraint weight {lambda} must be positive"
        )));
    }
    Ok(())
}
