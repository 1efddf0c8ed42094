//! Mid-slice QC renderings as binary PGM.

use std::path::Path;

use volmatte::AlphaMatte;

/// Axial, coronal and sagittal central slices side by side, 8-bit gray.
pub fn mid_slice_montage(alpha: &AlphaMatte) -> (usize, usize, Vec<u8>) {
    let [nx, ny, nz] = alpha.geom.dims;
    let (cx, cy, cz) = (nx / 2, ny / 2, nz / 2);
    let width = nx + 1 + nx + 1 + ny;
    let height = ny.max(nz);
    let mut pix = vec![0u8; width * height];
    let gray = |x: usize, y: usize, z: usize| {
        let v = alpha.values[alpha.geom.index(x, y, z)];
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    for y in 0..ny {
        for x in 0..nx {
            pix[y * width + x] = gray(x, y, cz);
        }
    }
    let off = nx + 1;
    for z in 0..nz {
        for x in 0..nx {
            pix[z * width + off + x] = gray(x, cy, z);
        }
    }
    let off = 2 * (nx + 1);
    for z in 0..nz {
        for y in 0..ny {
            pix[z * width + off + y] = gray(cx, y, z);
        }
    }
    (width, height, pix)
}

pub fn encode_pgm(width: usize, height: usize, pix: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pix);
    out
}

pub fn write_montage(alpha: &AlphaMatte, path: &Path) -> std::io::Result<()> {
    let (w, h, pix) = mid_slice_montage(alpha);
    std::fs::write(path, encode_pgm(w, h, &pix))
}
