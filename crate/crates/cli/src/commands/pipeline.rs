//! Resample → crop → trimap → matte with every requested variant.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volmatte::metrics::{evaluate, MatteMetrics, MetricOptions};
use volmatte::solve::{
    build_constraints, build_laplacian, feature_volume, solve_with_laplacian, MattingParams, Method, SolveOptions,
    SolveReport,
};
use volmatte::trimap::{build_trimap, fuse_masks, LabelCounts};
use volmatte::volume::{
    crop_alpha, crop_centered, crop_mask, resample_alpha_to_isotropic, resample_mask_to_isotropic,
    resample_to_isotropic, CropBox,
};
use volmatte::{AlphaMatte, Trimap, Unit, VolumeGrid};

use super::{matting_config, print_json, read_alpha, read_image, read_mask, write, write_json};
use crate::args::PipelineArgs;
use crate::fail::{CmdResult, Failure};
use crate::montage::write_montage;

pub const CROP_CENTER_RULE: &str = "union-mask centroid";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineInputs {
    pub image: String,
    pub masks: Vec<String>,
    pub gt: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preprocessing {
    pub source_dims: [usize; 3],
    pub source_spacing_mm: [f64; 3],
    pub spacing_mm: f64,
    pub resampled_dims: [usize; 3],
    pub crop: CropBox,
    pub crop_center_rule: String,
    pub cropped_dims: [usize; 3],
    pub fill_value: f32,
    pub dilate_radius: usize,
    pub trimap_counts: LabelCounts,
    pub image: String,
    pub trimap: String,
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub method: Method,
    pub calibrated: bool,
    pub matte: Option<String>,
    pub montage: Option<String>,
    pub report: Option<SolveReport>,
    pub metrics: Option<MatteMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub inputs: PipelineInputs,
    pub preprocessing: Option<Preprocessing>,
    pub params: Option<MattingParams>,
    pub options: Option<SolveOptions>,
    pub metric_options: Option<MetricOptions>,
    pub candidates: Vec<Candidate>,
    pub status: String,
    pub error: Option<String>,
}

struct Prepared {
    image: VolumeGrid,
    trimap: Trimap,
    reference: Option<AlphaMatte>,
    record: Preprocessing,
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, Failure> {
    let mut out: Vec<Method> = Vec::new();
    for n in names {
        let m: Method = n.trim().parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Failure::Usage("no methods selected".into()));
    }
    Ok(out)
}

fn file_stem(method: Method, calibrated: bool) -> &'static str {
    match (method, calibrated) {
        (Method::Cf, false) => "cf",
        (Method::Cf, true) => "cf_plus",
        (Method::Knn, false) => "knn",
        (Method::Knn, true) => "knn_plus",
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn prepare(args: &PipelineArgs) -> Result<Prepared, Failure> {
    if args.masks.len() < 2 {
        return Err(Failure::Usage(format!(
            "pipeline needs at least 2 masks, got {}",
            args.masks.len()
        )));
    }
    let image = read_image(&args.image)?;
    let masks = args
        .masks
        .iter()
        .map(|p| read_mask(p))
        .collect::<Result<Vec<_>, _>>()?;
    for (p, m) in args.masks.iter().zip(&masks) {
        if m.geom.dims != image.geom.dims {
            return Err(Failure::Usage(format!(
                "mask {} has dims {:?}, image has {:?}",
                p.display(),
                m.geom.dims,
                image.geom.dims
            )));
        }
    }
    let gt = args.gt.as_deref().map(read_alpha).transpose()?;
    if let Some(g) = &gt {
        if g.geom.dims != image.geom.dims {
            return Err(Failure::Usage(format!(
                "reference dims {:?} differ from image dims {:?}",
                g.geom.dims, image.geom.dims
            )));
        }
    }

    let t = args.spacing;
    let iso = resample_to_isotropic(&image, t)?;
    let iso_masks = masks
        .iter()
        .map(|m| resample_mask_to_isotropic(m, t))
        .collect::<volmatte::Result<Vec<_>>>()?;
    let iso_gt = gt.as_ref().map(|g| resample_alpha_to_isotropic(g, t)).transpose()?;

    let (_, union) = fuse_masks(&iso_masks)?;
    let centroid = union
        .centroid()
        .ok_or_else(|| Failure::Usage("all masks are empty after resampling".into()))?;
    let (z_lo, z_hi) = union.extent(2).expect("non-empty union has a z extent");
    let center = [0, 1, 2].map(|k| (centroid[k].round() as usize).min(iso.geom.dims[k] - 1));
    let crop = CropBox {
        center,
        xy_size: args.xy_size,
        z_lo,
        z_hi,
        z_pad: args.z_pad,
    };
    let fill = match iso.unit {
        Unit::Hu => args.fill_hu as f32,
        Unit::Normalized => 0.0,
    };
    let cropped = crop_centered(&iso, &crop, fill)?;
    let cropped_masks = iso_masks
        .iter()
        .map(|m| crop_mask(m, &crop))
        .collect::<volmatte::Result<Vec<_>>>()?;
    let reference = iso_gt.as_ref().map(|g| crop_alpha(g, &crop)).transpose()?;

    let (overlap, union) = fuse_masks(&cropped_masks)?;
    let trimap = build_trimap(&overlap, &union, args.dilate_radius)?;

    let image_stem = args.out_dir.join("image");
    let trimap_stem = args.out_dir.join("trimap");
    let reference_stem = args.out_dir.join("reference");
    write(cropped.clone(), &image_stem)?;
    write(trimap.clone(), &trimap_stem)?;
    if let Some(r) = &reference {
        write(r.clone(), &reference_stem)?;
    }
    let record = Preprocessing {
        source_dims: image.geom.dims,
        source_spacing_mm: image.geom.spacing,
        spacing_mm: t,
        resampled_dims: iso.geom.dims,
        crop,
        crop_center_rule: CROP_CENTER_RULE.into(),
        cropped_dims: cropped.geom.dims,
        fill_value: fill,
        dilate_radius: args.dilate_radius,
        trimap_counts: trimap.counts(),
        image: show(&image_stem),
        trimap: show(&trimap_stem),
        reference: reference.as_ref().map(|_| show(&reference_stem)),
    };
    Ok(Prepared {
        image: cropped,
        trimap,
        reference,
        record,
    })
}

struct Job<'a> {
    prep: &'a Prepared,
    params: &'a MattingParams,
    opts: &'a SolveOptions,
    metric_opts: &'a MetricOptions,
    out_dir: &'a Path,
}

impl Job<'_> {
    fn failed(method: Method, calibrated: bool, e: String) -> Candidate {
        Candidate {
            name: method.name(calibrated).into(),
            method,
            calibrated,
            matte: None,
            montage: None,
            report: None,
            metrics: None,
            error: Some(e),
        }
    }

    /// Both variants of one method, sharing its Laplacian.
    fn run_method(&self, method: Method, concurrent: bool) -> Vec<Candidate> {
        let features = match feature_volume(&self.prep.image, self.params.window) {
            Ok(f) => f,
            Err(e) => return [false, true].map(|c| Self::failed(method, c, e.to_string())).to_vec(),
        };
        let l = match build_laplacian(&features, method, self.params) {
            Ok(l) => l,
            Err(e) => return [false, true].map(|c| Self::failed(method, c, e.to_string())).to_vec(),
        };
        let solve = |calibrated: bool| match self.solve_variant(&l, method, calibrated) {
            Ok(c) => c,
            Err(e) => Self::failed(method, calibrated, e),
        };
        if concurrent {
            std::thread::scope(|s| {
                let plus = s.spawn(|| solve(true));
                let plain = solve(false);
                vec![plain, plus.join().expect("solver thread panicked")]
            })
        } else {
            vec![solve(false), solve(true)]
        }
    }

    fn solve_variant(
        &self,
        l: &volmatte::SparseSymMatrix,
        method: Method,
        calibrated: bool,
    ) -> Result<Candidate, String> {
        let prep = self.prep;
        if calibrated && prep.image.unit != Unit::Hu {
            return Err("calibrated variants need an image in HU".into());
        }
        let c = build_constraints(&prep.image, &prep.trimap, calibrated, self.params).map_err(|e| e.to_string())?;
        let (matte, _, report) =
            solve_with_laplacian(l, &c, prep.image.geom, self.opts).map_err(|e| e.to_string())?;
        let stem = self.out_dir.join(file_stem(method, calibrated));
        let montage: PathBuf = self.out_dir.join(format!("{}_montage.pgm", file_stem(method, calibrated)));
        volmatte::io::write_volume(&matte.clone().into(), &stem).map_err(|e| e.to_string())?;
        write_montage(&matte, &montage).map_err(|e| format!("{}: {e}", montage.display()))?;
        let metrics = match &prep.reference {
            Some(r) => Some(evaluate(&matte, r, self.metric_opts).map_err(|e| e.to_string())?),
            None => None,
        };
        Ok(Candidate {
            name: method.name(calibrated).into(),
            method,
            calibrated,
            matte: Some(show(&stem)),
            montage: Some(show(&montage)),
            report: Some(report),
            metrics,
            error: None,
        })
    }
}

fn empty_manifest(args: &PipelineArgs) -> PipelineManifest {
    PipelineManifest {
        inputs: PipelineInputs {
            image: show(&args.image),
            masks: args.masks.iter().map(|p| show(p)).collect(),
            gt: args.gt.as_deref().map(show),
        },
        preprocessing: None,
        params: None,
        options: None,
        metric_options: None,
        candidates: Vec::new(),
        status: "failed".into(),
        error: None,
    }
}

pub fn run(args: &PipelineArgs) -> CmdResult {
    let methods = parse_methods(&args.methods)?;
    let (params, opts) = matting_config(&args.matting)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.out_dir.display())))?;
    let manifest_path = args.out_dir.join("manifest.json");
    let mut manifest = empty_manifest(args);
    manifest.params = Some(params);
    manifest.options = Some(opts);

    let prep = match prepare(args) {
        Ok(p) => p,
        Err(f) => {
            manifest.error = Some(f.to_string());
            write_json(&manifest, &manifest_path)?;
            return Err(f);
        }
    };
    manifest.preprocessing = Some(prep.record.clone());
    let metric_opts = MetricOptions::default();
    if prep.reference.is_some() {
        manifest.metric_options = Some(metric_opts);
    }

    let job = Job {
        prep: &prep,
        params: &params,
        opts: &opts,
        metric_opts: &metric_opts,
        out_dir: &args.out_dir,
    };
    let concurrent = !args.serial;
    let per_method: Vec<Vec<Candidate>> = if concurrent {
        std::thread::scope(|s| {
            let handles: Vec<_> = methods
                .iter()
                .map(|&m| {
                    let job = &job;
                    s.spawn(move || job.run_method(m, true))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("method thread panicked")).collect()
        })
    } else {
        methods.iter().map(|&m| job.run_method(m, false)).collect()
    };
    manifest.candidates = per_method.into_iter().flatten().collect();

    let errors: Vec<String> = manifest
        .candidates
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("{}: {e}", c.name)))
        .collect();
    let stalled: Vec<&str> = manifest
        .candidates
        .iter()
        .filter(|c| c.report.is_some_and(|r| !r.converged))
        .map(|c| c.name.as_str())
        .collect();
    let outcome = if !errors.is_empty() {
        manifest.error = Some(errors.join("; "));
        Err(Failure::Unexpected(errors.join("; ")))
    } else if !stalled.is_empty() {
        manifest.status = "not-converged".into();
        Err(Failure::NotConverged(stalled.join(", ")))
    } else {
        manifest.status = "ok".into();
        Ok(())
    };
    write_json(&manifest, &manifest_path)?;
    print_json(&manifest)?;
    outcome
}
