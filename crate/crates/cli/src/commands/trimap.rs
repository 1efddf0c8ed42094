use serde::Serialize;
use volmatte::trimap::{build_trimap, fuse_masks, LabelCounts};

use super::{print_json, read_mask, write};
use crate::args::TrimapArgs;
use crate::fail::{CmdResult, Failure};

#[derive(Serialize)]
struct TrimapSummary {
    out: String,
    dilate_radius: usize,
    counts: LabelCounts,
}

pub fn run(args: &TrimapArgs) -> CmdResult {
    if args.masks.len() < 2 {
        return Err(Failure::Usage(format!(
            "trimap needs at least 2 masks, got {}",
            args.masks.len()
        )));
    }
    let masks = args
        .masks
        .iter()
        .map(|p| read_mask(p))
        .collect::<Result<Vec<_>, _>>()?;
    let (overlap, union) = fuse_masks(&masks)?;
    let trimap = build_trimap(&overlap, &union, args.dilate_radius)?;
    let counts = trimap.counts();
    write(trimap, &args.out)?;
    print_json(&TrimapSummary {
        out: args.out.display().to_string(),
        dilate_radius: args.dilate_radius,
        counts,
    })
}
