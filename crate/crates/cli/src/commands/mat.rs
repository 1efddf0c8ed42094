use serde::Serialize;
use volmatte::solve::{
    build_constraints, build_laplacian, feature_volume, solve_with_laplacian, MattingParams, Method, SolveOptions,
    SolveReport,
};
use volmatte::{SoftConstraint, Unit};

use super::{matting_config, print_json, read_image, read_trimap, sibling, write, write_json};
use crate::args::MatArgs;
use crate::fail::{CmdResult, Failure};

#[derive(Serialize)]
struct MatReport {
    method: &'static str,
    image: String,
    trimap: String,
    out: String,
    params: MattingParams,
    options: SolveOptions,
    report: SolveReport,
}

/// Per-voxel constraint dump: only constrained voxels are listed.
#[derive(Serialize)]
struct ConstraintDump {
    lambda: f64,
    constrained_count: usize,
    index: Vec<usize>,
    target: Vec<f64>,
}

impl ConstraintDump {
    fn new(c: &SoftConstraint) -> Self {
        let index: Vec<usize> = (0..c.len()).filter(|&i| c.constrained[i]).collect();
        let target = index.iter().map(|&i| c.s_values[i]).collect();
        ConstraintDump {
            lambda: c.lambda,
            constrained_count: index.len(),
            index,
            target,
        }
    }
}

pub fn run(args: &MatArgs) -> CmdResult {
    let method: Method = args.method.parse()?;
    let (params, opts) = matting_config(&args.matting)?;
    let image = read_image(&args.image)?;
    let trimap = read_trimap(&args.trimap)?;
    if image.geom.dims != trimap.geom.dims {
        return Err(Failure::Usage(format!(
            "image dims {:?} differ from trimap dims {:?}",
            image.geom.dims, trimap.geom.dims
        )));
    }
    if args.calibrated && image.unit != Unit::Hu {
        return Err(Failure::Usage("--calibrated needs an image in HU".into()));
    }
    let constraints = build_constraints(&image, &trimap, args.calibrated, &params)?;
    if args.debug_constraints {
        write_json(&ConstraintDump::new(&constraints), &sibling(&args.out, ".constraints.json"))?;
    }
    let features = feature_volume(&image, params.window)?;
    let l = build_laplacian(&features, method, &params)?;
    let (matte, _, report) = solve_with_laplacian(&l, &constraints, image.geom, &opts)?;
    write(matte, &args.out)?;
    let summary = MatReport {
        method: method.name(args.calibrated),
        image: args.image.display().to_string(),
        trimap: args.trimap.display().to_string(),
        out: args.out.display().to_string(),
        params,
        options: opts,
        report,
    };
    write_json(&summary, &sibling(&args.out, ".report.json"))?;
    print_json(&summary)?;
    if !report.converged {
        return Err(Failure::NotConverged(format!(
            "{} iterations, relative residual {:.3e}",
            report.iterations, report.final_rel_residual
        )));
    }
    Ok(())
}
