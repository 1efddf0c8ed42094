//! Raw binary + JSON sidecar persistence.
//!
//! A volume is stored as `<stem>.json` (header) and `<stem>.raw` (payload in
//! x-fastest order: little-endian `f32` for images and mattes, one byte per
//! voxel for masks and trimaps).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trimap::{Label, Trimap};
use crate::volume::{AlphaMatte, Geometry, LabelMask, Unit, VolumeGrid};

pub const ORDER_X_FASTEST: &str = "x-fastest";
pub const ENDIAN_LITTLE: &str = "little";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn size(&self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Image,
    Mask,
    Trimap,
    Alpha,
}

impl Kind {
    pub fn dtype(&self) -> Dtype {
        match self {
            Kind::Image | Kind::Alpha => Dtype::F32,
            Kind::Mask | Kind::Trimap => Dtype::U8,
        }
    }
}

/// The JSON sidecar; keys are exactly
/// `dims, spacing_mm, dtype, order, endianness, unit, kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
    pub endianness: String,
    pub unit: String,
    pub kind: String,
}

impl VolumeHeader {
    fn new(geom: &Geometry, kind: Kind, unit: &str) -> Self {
        let dtype = match kind.dtype() {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        };
        let kind = match kind {
            Kind::Image => "image",
            Kind::Mask => "mask",
            Kind::Trimap => "trimap",
            Kind::Alpha => "alpha",
        };
        VolumeHeader {
            dims: geom.dims,
            spacing_mm: geom.spacing,
            dtype: dtype.into(),
            order: ORDER_X_FASTEST.into(),
            endianness: ENDIAN_LITTLE.into(),
            unit: unit.into(),
            kind: kind.into(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            dims: self.dims,
            spacing: self.spacing_mm,
        }
    }

    /// Payload size implied by the header.
    pub fn payload_len(&self) -> Result<usize> {
        let dtype = parse_dtype(&self.dtype).ok_or_else(|| Error::InvalidArgument(self.dtype.clone()))?;
        Ok(self.geometry().len() * dtype.size())
    }
}

fn parse_dtype(s: &str) -> Option<Dtype> {
    match s {
        "f32" => Some(Dtype::F32),
        "u8" => Some(Dtype::U8),
        _ => None,
    }
}

fn parse_kind(s: &str) -> Option<Kind> {
    match s {
        "image" => Some(Kind::Image),
        "mask" => Some(Kind::Mask),
        "trimap" => Some(Kind::Trimap),
        "alpha" => Some(Kind::Alpha),
        _ => None,
    }
}

/// Any storable volume.
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Image(VolumeGrid),
    Mask(LabelMask),
    Trimap(Trimap),
    Alpha(AlphaMatte),
}

macro_rules! accessor {
    ($name:ident, $variant:ident, $ty:ty, $what:literal) => {
        pub fn $name(self) -> Result<$ty> {
            match self {
                VolumeData::$variant(v) => Ok(v),
                other => Err(Error::UnsupportedFormat {
                    path: PathBuf::new(),
                    reason: format!("expected {} but found {}", $what, other.kind_name()),
                }),
            }
        }
    };
}

impl VolumeData {
    pub fn kind(&self) -> Kind {
        match self {
            VolumeData::Image(_) => Kind::Image,
            VolumeData::Mask(_) => Kind::Mask,
            VolumeData::Trimap(_) => Kind::Trimap,
            VolumeData::Alpha(_) => Kind::Alpha,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self.kind() {
            Kind::Image => "image",
            Kind::Mask => "mask",
            Kind::Trimap => "trimap",
            Kind::Alpha => "alpha",
        }
    }

    pub fn geometry(&self) -> Geometry {
        match self {
            VolumeData::Image(v) => v.geom,
            VolumeData::Mask(v) => v.geom,
            VolumeData::Trimap(v) => v.geom,
            VolumeData::Alpha(v) => v.geom,
        }
    }

    accessor!(into_image, Image, VolumeGrid, "image");
    accessor!(into_mask, Mask, LabelMask, "mask");
    accessor!(into_trimap, Trimap, Trimap, "trimap");
    accessor!(into_alpha, Alpha, AlphaMatte, "alpha");

    fn header(&self) -> VolumeHeader {
        match self {
            VolumeData::Image(v) => VolumeHeader::new(&v.geom, Kind::Image, v.unit.as_str()),
            VolumeData::Mask(v) => VolumeHeader::new(&v.geom, Kind::Mask, "label"),
            VolumeData::Trimap(v) => VolumeHeader::new(&v.geom, Kind::Trimap, "label"),
            VolumeData::Alpha(v) => VolumeHeader::new(&v.geom, Kind::Alpha, "alpha"),
        }
    }

    fn payload(&self) -> Vec<u8> {
        fn floats(v: &[f32]) -> Vec<u8> {
            v.iter().flat_map(|x| x.to_le_bytes()).collect()
        }
        match self {
            VolumeData::Image(v) => floats(&v.values),
            VolumeData::Alpha(v) => floats(&v.values),
            VolumeData::Mask(v) => v.values.clone(),
            VolumeData::Trimap(v) => v.labels.iter().map(|&l| l as u8).collect(),
        }
    }
}

impl From<VolumeGrid> for VolumeData {
    fn from(v: VolumeGrid) -> Self {
        VolumeData::Image(v)
    }
}

impl From<LabelMask> for VolumeData {
    fn from(v: LabelMask) -> Self {
        VolumeData::Mask(v)
    }
}

impl From<Trimap> for VolumeData {
    fn from(v: Trimap) -> Self {
        VolumeData::Trimap(v)
    }
}

impl From<AlphaMatte> for VolumeData {
    fn from(v: AlphaMatte) -> Self {
        VolumeData::Alpha(v)
    }
}

/// `<stem><ext>` without touching any dots already in the stem.
pub fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s: OsString = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn header_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".json")
}

pub fn payload_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".raw")
}

pub fn write_volume(data: &VolumeData, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let json_path = header_path(stem);
    let raw_path = payload_path(stem);
    let header = serde_json::to_string_pretty(&data.header()).expect("header serializes");
    fs::write(&json_path, header).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, data.payload()).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

pub fn read_header(stem: impl AsRef<Path>) -> Result<VolumeHeader> {
    let json_path = header_path(stem.as_ref());
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: json_path,
        source,
    })
}

pub fn read_volume(stem: impl AsRef<Path>) -> Result<VolumeData> {
    let stem = stem.as_ref();
    let header = read_header(stem)?;
    let json_path = header_path(stem);
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: json_path.clone(),
        reason,
    };
    let dtype = parse_dtype(&header.dtype).ok_or_else(|| unsupported(format!("dtype '{}'", header.dtype)))?;
    let kind = parse_kind(&header.kind).ok_or_else(|| unsupported(format!("kind '{}'", header.kind)))?;
    if kind.dtype() != dtype {
        return Err(unsupported(format!("dtype '{}' not valid for kind '{}'", header.dtype, header.kind)));
    }
    if header.order != ORDER_X_FASTEST {
        return Err(unsupported(format!("order '{}'", header.order)));
    }
    if header.endianness != ENDIAN_LITTLE {
        return Err(unsupported(format!("endianness '{}'", header.endianness)));
    }
    let geom = header.geometry();
    geom.validate().map_err(|e| Error::CorruptFile {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;

    let raw_path = payload_path(stem);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = geom.len() * dtype.size();
    if bytes.len() != expected {
        return Err(Error::CorruptFile {
            path: raw_path,
            reason: format!("payload has {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let out_of_range = |index: usize, value: f64| Error::OutOfRange {
        path: raw_path.clone(),
        index,
        value,
    };
    let floats = || -> Vec<f32> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };

    let data = match kind {
        Kind::Image => {
            let unit = match header.unit.as_str() {
                "HU" => Unit::Hu,
                "normalized" => Unit::Normalized,
                other => return Err(unsupported(format!("image unit '{other}'"))),
            };
            let values = floats();
            if unit == Unit::Normalized {
                if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
                    return Err(out_of_range(i, values[i] as f64));
                }
            }
            VolumeData::Image(VolumeGrid::new(geom, values, unit)?)
        }
        Kind::Alpha => {
            let values = floats();
            if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(out_of_range(i, values[i] as f64));
            }
            VolumeData::Alpha(AlphaMatte::new(geom, values)?)
        }
        Kind::Mask => {
            if let Some(i) = bytes.iter().position(|&v| v > 1) {
                return Err(out_of_range(i, bytes[i] as f64));
            }
            VolumeData::Mask(LabelMask::new(geom, bytes)?)
        }
        Kind::Trimap => {
            let mut labels = Vec::with_capacity(bytes.len());
            for (i, &b) in bytes.iter().enumerate() {
                labels.push(Label::from_u8(b).ok_or_else(|| out_of_range(i, b as f64))?);
            }
            VolumeData::Trimap(Trimap::new(geom, labels)?)
        }
    };
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn zero_volume_payload_size() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("zeros");
        let vol = VolumeGrid::filled(Geometry::cube(2, 1.0), 0.0, Unit::Hu).unwrap();
        write_volume(&vol.into(), &stem).unwrap();
        let raw = fs::read(payload_path(&stem)).unwrap();
        assert_eq!(raw.len(), 32);
        assert!(raw.iter().all(|&b| b == 0));
    }

    #[test]
    fn header_keys_exact() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("h");
        let mask = LabelMask::from_predicate(Geometry::new([2, 3, 4], [0.5, 0.5, 1.25]).unwrap(), |i| i % 2 == 0).unwrap();
        write_volume(&mask.into(), &stem).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(header_path(&stem)).unwrap()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["dims", "dtype", "endianness", "kind", "order", "spacing_mm", "unit"]);
        assert_eq!(v["dtype"], "u8");
        assert_eq!(v["kind"], "mask");
        assert_eq!(v["order"], "x-fastest");
        assert_eq!(v["endianness"], "little");
    }

    #[test]
    fn trimap_payload_bytes() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("t");
        let geom = Geometry::cube(4, 1.0);
        let t = Trimap::new(geom, (0..64).map(|i| Label::from_u8((i % 3) as u8).unwrap()).collect()).unwrap();
        write_volume(&t.clone().into(), &stem).unwrap();
        let raw = fs::read(payload_path(&stem)).unwrap();
        assert!(raw.iter().all(|&b| b <= 2));
        assert_eq!(raw[..3], [0, 1, 2]);
        assert_eq!(read_volume(&stem).unwrap().into_trimap().unwrap(), t);
    }

    #[test]
    fn short_payload_is_corrupt() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("c");
        let vol = VolumeGrid::filled(Geometry::cube(2, 1.0), 1.0, Unit::Hu).unwrap();
        write_volume(&vol.into(), &stem).unwrap();
        fs::write(payload_path(&stem), [0u8; 31]).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::CorruptFile { .. })));
    }

    #[test]
    fn alpha_out_of_range_names_voxel() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("a");
        let a = AlphaMatte::filled(Geometry::cube(2, 1.0), 0.5).unwrap();
        write_volume(&a.into(), &stem).unwrap();
        let mut raw = fs::read(payload_path(&stem)).unwrap();
        raw[12..16].copy_from_slice(&1.5f32.to_le_bytes());
        raw[20..24].copy_from_slice(&(-0.5f32).to_le_bytes());
        fs::write(payload_path(&stem), raw).unwrap();
        match read_volume(&stem) {
            Err(Error::OutOfRange { index, value, .. }) => {
                assert_eq!(index, 3);
                assert_eq!(value, 1.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mask_out_of_range_rejected() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("m");
        let m = LabelMask::from_predicate(Geometry::cube(2, 1.0), |_| true).unwrap();
        write_volume(&m.clone().into(), &stem).unwrap();
        let back = read_volume(&stem).unwrap().into_mask().unwrap();
        assert!(back.values.iter().all(|&v| v <= 1));
        assert_eq!(back, m);
        fs::write(payload_path(&stem), [1, 1, 1, 1, 2, 1, 1, 1]).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::OutOfRange { index: 4, .. })));
    }

    #[test]
    fn unsupported_and_malformed_headers() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("u");
        let vol = VolumeGrid::filled(Geometry::cube(2, 1.0), 1.0, Unit::Hu).unwrap();
        write_volume(&vol.into(), &stem).unwrap();
        let text = fs::read_to_string(header_path(&stem)).unwrap();
        fs::write(header_path(&stem), text.replace("\"f32\"", "\"f64\"")).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::UnsupportedFormat { .. })));
        fs::write(header_path(&stem), text.replace("\"image\"", "\"mesh\"")).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::UnsupportedFormat { .. })));
        fs::write(header_path(&stem), "{ not json").unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::Parse { .. })));
        assert!(matches!(read_volume(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn kind_mismatch_accessor() {
        let m = LabelMask::from_predicate(Geometry::cube(2, 1.0), |_| true).unwrap();
        assert!(VolumeData::from(m).into_alpha().is_err());
    }

    proptest! {
        #[test]
        fn image_round_trip_bitwise(
            dims in (1usize..5, 1usize..5, 1usize..5),
            spacing in (0.1f64..3.0, 0.1f64..3.0, 0.1f64..3.0),
            bits in proptest::collection::vec(any::<u32>(), 64),
        ) {
            let geom = Geometry::new([dims.0, dims.1, dims.2], [spacing.0, spacing.1, spacing.2]).unwrap();
            let values: Vec<f32> = (0..geom.len()).map(|i| f32::from_bits(bits[i % 64])).collect();
            let vol = VolumeGrid::new(geom, values, Unit::Hu).unwrap();
            let dir = tempdir().unwrap();
            let stem = dir.path().join("r");
            write_volume(&vol.clone().into(), &stem).unwrap();
            let back = read_volume(&stem).unwrap().into_image().unwrap();
            prop_assert_eq!(back.geom, vol.geom);
            let a: Vec<u32> = back.values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = vol.values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
