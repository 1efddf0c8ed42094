use std::path::{Path, PathBuf};

use serde::Serialize;
use volmatte::cf::CfParams;
use volmatte::io::{read_volume, write_volume, VolumeData};
use volmatte::knn::KnnParams;
use volmatte::solve::{MattingParams, Preconditioner, SolveOptions};
use volmatte::{AlphaMatte, LabelMask, Trimap, VolumeGrid};

use crate::args::MattingArgs;
use crate::fail::Failure;

pub mod eval;
pub mod mat;
pub mod phantom;
pub mod pipeline;
pub mod trimap;

fn wrong_kind(path: &Path, e: volmatte::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

pub fn read_image(path: &Path) -> Result<VolumeGrid, Failure> {
    read_volume(path)?.into_image().map_err(|e| wrong_kind(path, e))
}

pub fn read_mask(path: &Path) -> Result<LabelMask, Failure> {
    read_volume(path)?.into_mask().map_err(|e| wrong_kind(path, e))
}

pub fn read_trimap(path: &Path) -> Result<Trimap, Failure> {
    read_volume(path)?.into_trimap().map_err(|e| wrong_kind(path, e))
}

pub fn read_alpha(path: &Path) -> Result<AlphaMatte, Failure> {
    read_volume(path)?.into_alpha().map_err(|e| wrong_kind(path, e))
}

pub fn write(data: impl Into<VolumeData>, stem: &Path) -> Result<(), Failure> {
    write_volume(&data.into(), stem).map_err(|e| Failure::Unexpected(e.to_string()))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::Unexpected(format!("{}: {e}", path.display())))
}

pub fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// `<stem><suffix>` without touching any extension-like part of the stem.
pub fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn matting_config(a: &MattingArgs) -> Result<(MattingParams, SolveOptions), Failure> {
    let preconditioner = match a.preconditioner.to_ascii_lowercase().as_str() {
        "jacobi" => Preconditioner::Jacobi,
        "none" => Preconditioner::None,
        other => return Err(Failure::Usage(format!("unknown preconditioner '{other}'"))),
    };
    if !(a.lambda > 0.0 && a.lambda.is_finite()) {
        return Err(Failure::Usage(format!("lambda {} must be positive", a.lambda)));
    }
    let params = MattingParams {
        cf: CfParams {
            window_k: a.cf_window,
            epsilon: a.epsilon,
        },
        knn: KnnParams {
            k_neighbors: a.k_neighbors,
            spatial_weight: a.spatial_weight,
        },
        window: a.window,
        lambda: a.lambda,
    };
    params.cf.validate()?;
    let opts = SolveOptions {
        tol_rel_residual: a.tol,
        max_iterations: a.max_iterations,
        preconditioner,
        clamp_output: true,
    };
    Ok((params, opts))
}
