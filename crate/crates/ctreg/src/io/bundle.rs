//! Raw-bundle volume format: a plain-text sidecar header (`.rvol`) next to a
//! little-endian float32 voxel block (`.rbin`).
//!
//! The format exists so tests and pipelines never have to depend on NIfTI
//! parsing. Values are stored in memory order (last axis fastest);
//! displacement fields store interleaved (u0, u1, u2) triplets in voxel
//! units. Round-trips are bit-exact for float32 payloads.

use super::LoadedVolume;
use crate::error::{Error, Result};
use crate::volume::{DisplacementField, Grid, LabelVolume, Volume};
use byteorder::{ByteOrder, LittleEndian};
use std::path::{Path, PathBuf};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Parsed sidecar header.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleHeader {
    pub format_version: u32,
    pub kind: BundleKind,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// Label volumes only.
    pub num_classes: Option<usize>,
    /// Relative name of the voxel block file.
    pub data_file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundleKind {
    Scalar,
    Labels,
    Ddf,
}

impl BundleKind {
    fn as_str(self) -> &'static str {
        match self {
            BundleKind::Scalar => "scalar",
            BundleKind::Labels => "labels",
            BundleKind::Ddf => "ddf",
        }
    }
}

fn parse_triplet<T: std::str::FromStr>(value: &str, key: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::MalformedFile(format!("{key} needs 3 entries, got '{value}'")));
    }
    let mut out: Vec<T> = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| Error::MalformedFile(format!("{key} entry '{p}' unparsable")))?,
        );
    }
    Ok([out.remove(0), out.remove(0), out.remove(0)])
}

/// Parse the sidecar header text.
pub fn parse_bundle_header(text: &str) -> Result<BundleHeader> {
    let mut format_version = None;
    let mut kind = None;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut num_classes = None;
    let mut data_file = None;
    let mut vector_units = None;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::MalformedFile(format!("line {}: no ':' in '{line}'", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format_version" => {
                format_version = Some(value.parse::<u32>().map_err(|_| {
                    Error::MalformedFile(format!("format_version '{value}' unparsable"))
                })?)
            }
            "kind" => {
                kind = Some(match value {
                    "scalar" => BundleKind::Scalar,
                    "labels" => BundleKind::Labels,
                    "ddf" => BundleKind::Ddf,
                    other => {
                        return Err(Error::MalformedFile(format!("unknown kind '{other}'")))
                    }
                })
            }
            "dims" => dims = Some(parse_triplet::<usize>(value, "dims")?),
            "spacing" => spacing = Some(parse_triplet::<f64>(value, "spacing")?),
            "origin" => origin = Some(parse_triplet::<f64>(value, "origin")?),
            "num_classes" => {
                num_classes = Some(value.parse::<usize>().map_err(|_| {
                    Error::MalformedFile(format!("num_classes '{value}' unparsable"))
                })?)
            }
            "vector_units" => vector_units = Some(value.to_string()),
            "data" => data_file = Some(value.to_string()),
            other => return Err(Error::MalformedFile(format!("unknown header key '{other}'"))),
        }
    }

    let format_version =
        format_version.ok_or_else(|| Error::MalformedFile("missing format_version".into()))?;
    if format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::MalformedFile(format!(
            "format_version {format_version}, this reader supports {BUNDLE_FORMAT_VERSION}"
        )));
    }
    let kind = kind.ok_or_else(|| Error::MalformedFile("missing kind".into()))?;
    if kind == BundleKind::Ddf {
        match vector_units.as_deref() {
            Some("voxel") => {}
            Some(other) => {
                return Err(Error::MalformedFile(format!(
                    "vector_units '{other}' (only 'voxel' is defined)"
                )))
            }
            None => return Err(Error::MalformedFile("ddf header missing vector_units".into())),
        }
    }
    if kind == BundleKind::Labels && num_classes.is_none() {
        return Err(Error::MalformedFile("labels header missing num_classes".into()));
    }
    let header = BundleHeader {
        format_version,
        kind,
        dims: dims.ok_or_else(|| Error::MalformedFile("missing dims".into()))?,
        spacing: spacing.ok_or_else(|| Error::MalformedFile("missing spacing".into()))?,
        origin: origin.ok_or_else(|| Error::MalformedFile("missing origin".into()))?,
        num_classes,
        data_file: data_file.ok_or_else(|| Error::MalformedFile("missing data".into()))?,
    };
    Ok(header)
}

fn render_header(h: &BundleHeader) -> String {
    let mut s = String::new();
    s.push_str(&format!("format_version: {}\n", h.format_version));
    s.push_str(&format!("kind: {}\n", h.kind.as_str()));
    s.push_str(&format!("dims: {} {} {}\n", h.dims[0], h.dims[1], h.dims[2]));
    s.push_str(&format!("spacing: {} {} {}\n", h.spacing[0], h.spacing[1], h.spacing[2]));
    s.push_str(&format!("origin: {} {} {}\n", h.origin[0], h.origin[1], h.origin[2]));
    if let Some(k) = h.num_classes {
        s.push_str(&format!("num_classes: {k}\n"));
    }
    if h.kind == BundleKind::Ddf {
        s.push_str("vector_units: voxel\n");
    }
    s.push_str(&format!("data: {}\n", h.data_file));
    s
}

fn data_path(header_path: &Path, data_file: &str) -> PathBuf {
    match header_path.parent() {
        Some(dir) => dir.join(data_file),
        None => PathBuf::from(data_file),
    }
}

/// Decode a bundle from its header text and raw data block.
pub fn decode_bundle(header: &BundleHeader, data: &[u8]) -> Result<LoadedVolume> {
    let grid = Grid::new(header.dims, header.spacing, header.origin)
        .map_err(|e| e.prefix("bundle geometry"))?;
    let n = grid.len();
    let ncomp = if header.kind == BundleKind::Ddf { 3 } else { 1 };
    let need = n
        .checked_mul(ncomp)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::MalformedFile("dims overflow".into()))?;
    if data.len() != need {
        return Err(Error::MalformedFile(format!(
            "data block is {} bytes, dims imply {need}",
            data.len()
        )));
    }
    let floats: Vec<f64> = (0..n * ncomp)
        .map(|i| LittleEndian::read_f32(&data[4 * i..]) as f64)
        .collect();
    if let Some(bad) = floats.iter().find(|v| !v.is_finite()) {
        return Err(Error::MalformedFile(format!("non-finite voxel value {bad}")));
    }
    match header.kind {
        BundleKind::Scalar => Ok(LoadedVolume::Scalar(Volume::new(grid, floats)?)),
        BundleKind::Labels => {
            let k = header.num_classes.expect("validated in parse");
            let mut labels = Vec::with_capacity(n);
            for v in floats {
                if v.fract() != 0.0 || !(0.0..128.0).contains(&v) {
                    return Err(Error::UnknownLabel(format!("label payload holds {v}")));
                }
                labels.push(v as u8);
            }
            Ok(LoadedVolume::Labels(LabelVolume::new(grid, labels, k)?))
        }
        BundleKind::Ddf => {
            let vectors: Vec<[f64; 3]> =
                (0..n).map(|i| [floats[3 * i], floats[3 * i + 1], floats[3 * i + 2]]).collect();
            Ok(LoadedVolume::Field(DisplacementField::new(grid, vectors)?))
        }
    }
}

pub fn read_bundle(header_path: &Path) -> Result<LoadedVolume> {
    let text = std::fs::read_to_string(header_path)
        .map_err(|e| Error::MalformedFile(format!("{}: {e}", header_path.display())))?;
    let header = parse_bundle_header(&text)?;
    let dp = data_path(header_path, &header.data_file);
    let data =
        std::fs::read(&dp).map_err(|e| Error::MalformedFile(format!("{}: {e}", dp.display())))?;
    decode_bundle(&header, &data)
}

fn encode_data(vol: &LoadedVolume) -> Vec<u8> {
    match vol {
        LoadedVolume::Scalar(v) => {
            let mut out = vec![0u8; v.values.len() * 4];
            for (i, &x) in v.values.iter().enumerate() {
                LittleEndian::write_f32(&mut out[4 * i..], x as f32);
            }
            out
        }
        LoadedVolume::Labels(v) => {
            let mut out = vec![0u8; v.labels.len() * 4];
            for (i, &l) in v.labels.iter().enumerate() {
                LittleEndian::write_f32(&mut out[4 * i..], l as f32);
            }
            out
        }
        LoadedVolume::Field(v) => {
            let mut out = vec![0u8; v.vectors.len() * 12];
            for (i, vec3) in v.vectors.iter().enumerate() {
                for c in 0..3 {
                    LittleEndian::write_f32(&mut out[4 * (3 * i + c)..], vec3[c] as f32);
                }
            }
            out
        }
    }
}

pub fn write_bundle(vol: &LoadedVolume, header_path: &Path) -> Result<()> {
    let (grid, kind, num_classes) = match vol {
        LoadedVolume::Scalar(v) => (&v.grid, BundleKind::Scalar, None),
        LoadedVolume::Labels(v) => (&v.grid, BundleKind::Labels, Some(v.num_classes)),
        LoadedVolume::Field(v) => (&v.grid, BundleKind::Ddf, None),
    };
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::WriteError(format!("bad bundle path {}", header_path.display())))?;
    let data_file = format!("{stem}.rbin");
    let header = BundleHeader {
        format_version: BUNDLE_FORMAT_VERSION,
        kind,
        dims: grid.dims,
        spacing: grid.spacing,
        origin: grid.origin,
        num_classes,
        data_file: data_file.clone(),
    };
    super::write_atomic(header_path, render_header(&header).as_bytes())?;
    super::write_atomic(&data_path(header_path, &data_file), &encode_data(vol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = BundleHeader {
            format_version: 1,
            kind: BundleKind::Ddf,
            dims: [4, 5, 6],
            spacing: [1.25, 3.0, 0.5],
            origin: [-10.0, 0.0, 2.5e-3],
            num_classes: None,
            data_file: "field.rbin".into(),
        };
        let parsed = parse_bundle_header(&render_header(&h)).unwrap();
        assert_eq!(parsed, h);
    }

    #[test]
    fn header_rejects_unknown_key_and_bad_version() {
        assert!(matches!(
            parse_bundle_header("format_version: 1\nkind: scalar\nfoo: 1\n"),
            Err(Error::MalformedFile(_))
        ));
        assert!(matches!(
            parse_bundle_header("format_version: 99\nkind: scalar\n"),
            Err(Error::MalformedFile(_))
        ));
        assert!(matches!(parse_bundle_header("dims 1 2 3\n"), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn data_length_checked() {
        let h = parse_bundle_header(
            "format_version: 1\nkind: scalar\ndims: 2 2 2\nspacing: 1 1 1\norigin: 0 0 0\ndata: x.rbin\n",
        )
        .unwrap();
        assert!(matches!(decode_bundle(&h, &[0u8; 4]), Err(Error::MalformedFile(_))));
        assert!(decode_bundle(&h, &[0u8; 32]).is_ok());
    }
}
