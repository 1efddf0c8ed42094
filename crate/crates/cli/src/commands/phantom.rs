use std::path::Path;

use serde::{Deserialize, Serialize};
use volmatte::phantom::{generate, PhantomSpec};

use super::{print_json, write, write_json};
use crate::args::PhantomArgs;
use crate::fail::{CmdResult, Failure};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub spec: PhantomSpec,
    pub annotators: usize,
    pub thresholds: Vec<f64>,
    pub image: String,
    pub alpha: String,
    pub fg: String,
    pub bg: String,
    pub masks: Vec<String>,
}

pub fn run(args: &PhantomArgs) -> CmdResult {
    let spec = PhantomSpec {
        size: args.size,
        seed: args.seed,
        fg_hu_range: args.fg_hu,
        bg_hu_range: args.bg_hu,
        blob_radius_frac: args.radius_frac,
        edge_softness_frac: args.softness,
        noise_hu_sigma: args.noise_hu,
        radius_jitter_frac: args.jitter,
        spacing_mm: args.spacing,
    };
    let ph = generate(&spec, args.annotators)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.out_dir.display())))?;
    let stem = |name: &str| args.out_dir.join(name);
    let rel = |p: &Path| p.display().to_string();

    write(ph.image, &stem("image"))?;
    write(ph.alpha, &stem("alpha_gt"))?;
    write(ph.fg, &stem("fg"))?;
    write(ph.bg, &stem("bg"))?;
    let mut masks = Vec::with_capacity(ph.masks.len());
    for (j, m) in ph.masks.into_iter().enumerate() {
        let p = stem(&format!("mask_{j}"));
        write(m, &p)?;
        masks.push(rel(&p));
    }
    let manifest = PhantomManifest {
        spec,
        annotators: args.annotators,
        thresholds: ph.thresholds,
        image: rel(&stem("image")),
        alpha: rel(&stem("alpha_gt")),
        fg: rel(&stem("fg")),
        bg: rel(&stem("bg")),
        masks,
    };
    write_json(&manifest, &args.out_dir.join("manifest.json"))?;
    print_json(&manifest)
}
