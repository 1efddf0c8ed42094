//! Synthetic compositing phantoms with analytically known alpha.
//!
//! A radially symmetric soft blob defines the ground-truth matte; the image is
//! composited as `I = α·F + (1 − α)·B` plus optional Gaussian noise, and
//! simulated annotators threshold the matte at random levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{AlphaMatte, Geometry, LabelMask, Unit, VolumeGrid};

pub const MIN_PHANTOM_SIZE: usize = 16;

/// Annotator thresholds are drawn uniformly from this range.
pub const ANNOTATOR_TAU_RANGE: (f64, f64) = (0.2, 0.8);

// independent random streams derived from one seed
const STREAM_INTENSITY: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_ANNOTATORS: u64 = 3;
const STREAM_SHAPE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub seed: u64,
    pub fg_hu_range: (f64, f64),
    pub bg_hu_range: (f64, f64),
    pub blob_radius_frac: f64,
    pub edge_softness_frac: f64,
    pub noise_hu_sigma: f64,
    /// Amplitude of the smooth angular radius perturbation (0 disables it).
    pub radius_jitter_frac: f64,
    pub spacing_mm: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            size: 32,
            seed: 0,
            fg_hu_range: (-50.0, 50.0),
            bg_hu_range: (-900.0, -800.0),
            blob_radius_frac: 0.3,
            edge_softness_frac: 0.5,
            noise_hu_sigma: 0.0,
            radius_jitter_frac: 0.0,
            spacing_mm: 0.5,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.size < MIN_PHANTOM_SIZE {
            return bad(format!("size {} below minimum {MIN_PHANTOM_SIZE}", self.size));
        }
        let (f0, f1) = self.fg_hu_range;
        let (b0, b1) = self.bg_hu_range;
        if f0 > f1 || b0 > b1 {
            return bad("HU ranges must be ordered (low, high)".into());
        }
        if b1 >= f0 {
            return bad(format!(
                "foreground range {:?} must lie above background range {:?}",
                self.fg_hu_range, self.bg_hu_range
            ));
        }
        if !(self.blob_radius_frac > 0.0 && self.blob_radius_frac < 0.5) {
            return bad(format!("blob radius fraction {} outside (0, 0.5)", self.blob_radius_frac));
        }
        if !(self.edge_softness_frac >= 0.0 && self.edge_softness_frac <= 1.0) {
            return bad(format!("edge softness {} outside [0, 1]", self.edge_softness_frac));
        }
        if !(self.noise_hu_sigma >= 0.0) {
            return bad(format!("noise sigma {} must be non-negative", self.noise_hu_sigma));
        }
        if !(self.radius_jitter_frac >= 0.0 && self.radius_jitter_frac < 0.25) {
            return bad(format!("radius jitter {} outside [0, 0.25)", self.radius_jitter_frac));
        }
        if !(self.spacing_mm > 0.0) {
            return bad(format!("spacing {} must be positive", self.spacing_mm));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::cube(self.size, self.spacing_mm)
    }

    pub fn radius(&self) -> f64 {
        self.blob_radius_frac * self.size as f64
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Cosine falloff: 1 inside `R(1 − s)`, 0 beyond `R`, `cos²` in between.
pub fn cosine_profile(r: f64, radius: f64, softness: f64) -> f64 {
    let inner = radius * (1.0 - softness);
    if r <= inner {
        1.0
    } else if r >= radius {
        0.0
    } else {
        let t = (r - inner) / (radius - inner);
        let c = (std::f64::consts::FRAC_PI_2 * t).cos();
        c * c
    }
}

pub fn gen_ground_truth_alpha(spec: &PhantomSpec) -> Result<AlphaMatte> {
    spec.validate()?;
    let geom = spec.geometry();
    let center = (spec.size as f64 - 1.0) / 2.0;
    let radius = spec.radius();
    let coeffs: [f64; 4] = if spec.radius_jitter_frac > 0.0 {
        let mut rng = stream(spec.seed, STREAM_SHAPE);
        std::array::from_fn(|_| rng.random_range(-1.0..1.0))
    } else {
        [0.0; 4]
    };
    let values = (0..geom.len())
        .map(|i| {
            let c = geom.coords(i);
            let d = c.map(|v| v as f64 - center);
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let mut local_radius = radius;
            if spec.radius_jitter_frac > 0.0 && r > 0.0 {
                let u = d.map(|v| v / r);
                // quadrupole-like angular modulation, bounded by 1 in magnitude
                let m = (coeffs[0] * u[0] * u[1]
                    + coeffs[1] * u[1] * u[2]
                    + coeffs[2] * u[2] * u[0]
                    + coeffs[3] * (u[0] * u[0] - u[1] * u[1]))
                    / 2.0;
                local_radius *= 1.0 + spec.radius_jitter_frac * m;
            }
            cosine_profile(r, local_radius, spec.edge_softness_frac) as f32
        })
        .collect();
    AlphaMatte::new(geom, values)
}

/// Uniform foreground and background volumes, each at an intensity drawn from
/// its HU range.
pub fn gen_fg_bg(spec: &PhantomSpec) -> Result<(VolumeGrid, VolumeGrid)> {
    spec.validate()?;
    let mut rng = stream(spec.seed, STREAM_INTENSITY);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let fg = draw(spec.fg_hu_range) as f32;
    let bg = draw(spec.bg_hu_range) as f32;
    let geom = spec.geometry();
    Ok((
        VolumeGrid::filled(geom, fg, Unit::Hu)?,
        VolumeGrid::filled(geom, bg, Unit::Hu)?,
    ))
}

/// `I = α·F + (1 − α)·B` plus seeded Gaussian noise of `noise_sigma` HU.
pub fn composite(
    fg: &VolumeGrid,
    bg: &VolumeGrid,
    alpha: &AlphaMatte,
    noise_sigma: f64,
    seed: u64,
) -> Result<VolumeGrid> {
    fg.geom.ensure_same(&bg.geom, "composite fg/bg")?;
    fg.geom.ensure_same(&alpha.geom, "composite alpha")?;
    if fg.unit != bg.unit {
        return Err(Error::InvalidArgument("foreground and background units differ".into()));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma {noise_sigma} must be non-negative")));
    }
    let mut values: Vec<f32> = alpha
        .values
        .iter()
        .zip(fg.values.iter().zip(&bg.values))
        .map(|(&a, (&f, &b))| {
            let a = a as f64;
            (a * f as f64 + (1.0 - a) * b as f64) as f32
        })
        .collect();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = stream(seed, STREAM_NOISE);
        for v in values.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    if fg.unit == Unit::Normalized {
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    VolumeGrid::new(fg.geom, values, fg.unit)
}

/// Thresholds drawn for `n` simulated annotators.
pub fn annotator_thresholds(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, STREAM_ANNOTATORS);
    (0..n)
        .map(|_| rng.random_range(ANNOTATOR_TAU_RANGE.0..ANNOTATOR_TAU_RANGE.1))
        .collect()
}

/// Annotator `j` marks `{α ≥ τ_j}`.
pub fn simulate_annotations(gt_alpha: &AlphaMatte, n: usize, seed: u64) -> Result<Vec<LabelMask>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 annotators, got {n}")));
    }
    annotator_thresholds(n, seed)
        .into_iter()
        .map(|tau| LabelMask::from_predicate(gt_alpha.geom, |i| gt_alpha.values[i] as f64 >= tau))
        .collect()
}

/// A complete phantom case.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub image: VolumeGrid,
    pub alpha: AlphaMatte,
    pub fg: VolumeGrid,
    pub bg: VolumeGrid,
    pub masks: Vec<LabelMask>,
    pub thresholds: Vec<f64>,
}

pub fn generate(spec: &PhantomSpec, annotators: usize) -> Result<Phantom> {
    let alpha = gen_ground_truth_alpha(spec)?;
    let (fg, bg) = gen_fg_bg(spec)?;
    let image = composite(&fg, &bg, &alpha, spec.noise_hu_sigma, spec.seed)?;
    let masks = simulate_annotations(&alpha, annotators, spec.seed)?;
    Ok(Phantom {
        spec: *spec,
        image,
        alpha,
        fg,
        bg,
        masks,
        thresholds: annotator_thresholds(annotators, spec.seed),
    })
}
