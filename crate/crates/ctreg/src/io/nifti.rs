//! NIfTI-1 reader and writer for the axis-aligned subset.
//!
//! Single-file `.nii` (magic "n+1\0"), optionally gzip-compressed, 348-byte
//! header. Supported datatypes: uint8, int16, int32, float32, float64.
//! 3-D integer files load as label volumes, 3-D float files as scalar
//! volumes, and 4-D files whose 4th dimension is 3 load as displacement
//! fields (component-last, vectors in voxel units). Any orientation matrix
//! that is not a positive diagonal is rejected loudly rather than silently
//! reinterpreted.
//!
//! File voxel order is the NIfTI convention (first dimension fastest); the
//! in-memory layout keeps the last axis fastest, so read/write permute.

use super::LoadedVolume;
use crate::error::{Error, Result};
use crate::volume::{DisplacementField, Grid, LabelVolume, Volume};
use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use std::io::{Read, Write};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QUATERN_C: usize = 260;
    pub const QUATERN_D: usize = 264;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

struct Header {
    dims: Vec<usize>,
    datatype: i16,
    pixdim: [f64; 3],
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
    origin: [f64; 3],
}

fn parse_header<E: ByteOrder>(h: &[u8]) -> Result<Header> {
    let ndim = E::read_i16(&h[offset::DIM..]) as usize;
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedFile(format!("dim[0] = {ndim} outside 1..=7")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 1..=ndim {
        let d = E::read_i16(&h[offset::DIM + 2 * i..]);
        if d < 1 {
            return Err(Error::MalformedFile(format!("dim[{i}] = {d} must be >= 1")));
        }
        dims.push(d as usize);
    }
    let datatype = E::read_i16(&h[offset::DATATYPE..]);
    let bitpix = E::read_i16(&h[offset::BITPIX..]);
    let expected_bitpix = match datatype {
        DT_UINT8 => 8,
        DT_INT16 => 16,
        DT_INT32 | DT_FLOAT32 => 32,
        DT_FLOAT64 => 64,
        other => {
            return Err(Error::UnsupportedDatatype(format!(
                "nifti datatype code {other}; supported: uint8, int16, int32, float32, float64"
            )))
        }
    };
    if bitpix != expected_bitpix {
        return Err(Error::MalformedFile(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype}"
        )));
    }

    let qfac = E::read_f32(&h[offset::PIXDIM..]);
    let mut pixdim = [0.0f64; 3];
    for a in 0..3 {
        let p = E::read_f32(&h[offset::PIXDIM + 4 * (a + 1)..]);
        if !p.is_finite() {
            return Err(Error::MalformedFile(format!("pixdim[{}] = {p}", a + 1)));
        }
        // NIfTI convention: nonpositive pixdim means unknown, treat as 1 mm
        pixdim[a] = if p > 0.0 { p as f64 } else { 1.0 };
    }

    let vox_offset_f = E::read_f32(&h[offset::VOX_OFFSET..]);
    if !vox_offset_f.is_finite() || vox_offset_f < HEADER_SIZE as f32 {
        return Err(Error::MalformedFile(format!("vox_offset {vox_offset_f}")));
    }
    let scl_slope = E::read_f32(&h[offset::SCL_SLOPE..]);
    let scl_inter = E::read_f32(&h[offset::SCL_INTER..]);
    if !scl_slope.is_finite() || !scl_inter.is_finite() {
        return Err(Error::MalformedFile("non-finite scl_slope/scl_inter".into()));
    }

    // Orientation: accept only positive-diagonal axis-aligned geometry.
    let sform_code = E::read_i16(&h[offset::SFORM_CODE..]);
    let qform_code = E::read_i16(&h[offset::QFORM_CODE..]);
    let mut origin = [0.0f64; 3];
    if sform_code > 0 {
        let rows = [
            read_row::<E>(&h[offset::SROW_X..]),
            read_row::<E>(&h[offset::SROW_Y..]),
            read_row::<E>(&h[offset::SROW_Z..]),
        ];
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row[..3].iter().enumerate() {
                if r == c {
                    if v <= 0.0 {
                        return Err(Error::UnsupportedOrientation(format!(
                            "sform diagonal entry {v} at axis {r} (flips are rejected)"
                        )));
                    }
                } else if v.abs() > 1e-4 {
                    return Err(Error::UnsupportedOrientation(format!(
                        "sform has off-diagonal rotation term {v} at ({r},{c})"
                    )));
                }
            }
            origin[r] = row[3] as f64;
            pixdim[r] = rows[r][r] as f64;
        }
    } else if qform_code > 0 {
        let b = E::read_f32(&h[offset::QUATERN_B..]);
        let c = E::read_f32(&h[offset::QUATERN_C..]);
        let d = E::read_f32(&h[offset::QUATERN_D..]);
        if b.abs() > 1e-6 || c.abs() > 1e-6 || d.abs() > 1e-6 {
            return Err(Error::UnsupportedOrientation(format!(
                "qform quaternion ({b}, {c}, {d}) encodes a rotation"
            )));
        }
        if qfac < 0.0 {
            return Err(Error::UnsupportedOrientation("qform qfac = -1 encodes a flip".into()));
        }
        for a in 0..3 {
            origin[a] = E::read_f32(&h[offset::QOFFSET_X + 4 * a..]) as f64;
        }
    }

    Ok(Header {
        dims,
        datatype,
        pixdim,
        vox_offset: vox_offset_f as usize,
        scl_slope,
        scl_inter,
        origin,
    })
}

fn read_row<E: ByteOrder>(bytes: &[u8]) -> [f32; 4] {
    [
        E::read_f32(bytes),
        E::read_f32(&bytes[4..]),
        E::read_f32(&bytes[8..]),
        E::read_f32(&bytes[12..]),
    ]
}

fn decode_values<E: ByteOrder>(
    data: &[u8],
    datatype: i16,
    count: usize,
    slope: f32,
    inter: f32,
) -> Result<Vec<f64>> {
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        _ => unreachable!("datatype validated in header"),
    };
    let need = count
        .checked_mul(width)
        .ok_or_else(|| Error::MalformedFile("voxel count overflows".into()))?;
    if data.len() < need {
        return Err(Error::MalformedFile(format!(
            "truncated data section: {} bytes for {need} required",
            data.len()
        )));
    }
    // slope 0 means "no scaling" per the NIfTI spec
    let apply = slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let raw = match datatype {
            DT_UINT8 => data[i] as f64,
            DT_INT16 => E::read_i16(&data[2 * i..]) as f64,
            DT_INT32 => E::read_i32(&data[4 * i..]) as f64,
            DT_FLOAT32 => E::read_f32(&data[4 * i..]) as f64,
            DT_FLOAT64 => E::read_f64(&data[8 * i..]),
            _ => unreachable!(),
        };
        let v = if apply { raw * slope as f64 + inter as f64 } else { raw };
        if !v.is_finite() {
            return Err(Error::MalformedFile(format!("non-finite voxel value {v}")));
        }
        out.push(v);
    }
    Ok(out)
}

/// File linear index of voxel (x0, x1, x2, comp) under the NIfTI
/// first-dimension-fastest convention.
#[inline]
fn file_index(dims: [usize; 3], x: [usize; 3], comp: usize) -> usize {
    x[0] + dims[0] * (x[1] + dims[1] * (x[2] + dims[2] * comp))
}

/// Parse a NIfTI-1 volume from raw (possibly gzipped) bytes.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<LoadedVolume> {
    let decompressed;
    let bytes = if is_gzip(bytes) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::MalformedFile(format!("gzip decode: {e}")))?;
        decompressed = out;
        &decompressed
    } else {
        bytes
    };
    if bytes.len() < VOX_OFFSET {
        return Err(Error::MalformedFile(format!("{} bytes, need at least {VOX_OFFSET}", bytes.len())));
    }
    if &bytes[offset::MAGIC..offset::MAGIC + 4] != MAGIC {
        return Err(Error::MalformedFile("magic is not \"n+1\\0\"".into()));
    }
    let header = match LittleEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) {
        348 => parse_header::<LittleEndian>(&bytes[..HEADER_SIZE])?,
        _ if BigEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == 348 => {
            parse_header::<BigEndian>(&bytes[..HEADER_SIZE])?
        }
        other => {
            return Err(Error::MalformedFile(format!("sizeof_hdr {other} != 348 in either byte order")))
        }
    };
    let big_endian = LittleEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) != 348;

    let (dims3, ncomp) = match header.dims.len() {
        3 => ([header.dims[0], header.dims[1], header.dims[2]], 1usize),
        4 if header.dims[3] == 3 => ([header.dims[0], header.dims[1], header.dims[2]], 3usize),
        4 if header.dims[3] == 1 => ([header.dims[0], header.dims[1], header.dims[2]], 1usize),
        n => {
            return Err(Error::MalformedFile(format!(
                "unsupported shape: dim[0] = {n}, dims {:?} (3-D or 4-D with 3 components)",
                header.dims
            )))
        }
    };
    let count = dims3[0]
        .checked_mul(dims3[1])
        .and_then(|v| v.checked_mul(dims3[2]))
        .and_then(|v| v.checked_mul(ncomp))
        .ok_or_else(|| Error::MalformedFile("dims overflow".into()))?;
    if bytes.len() < header.vox_offset {
        return Err(Error::MalformedFile("vox_offset beyond end of file".into()));
    }
    let data = &bytes[header.vox_offset..];
    let values = if big_endian {
        decode_values::<BigEndian>(data, header.datatype, count, header.scl_slope, header.scl_inter)?
    } else {
        decode_values::<LittleEndian>(data, header.datatype, count, header.scl_slope, header.scl_inter)?
    };

    let grid = Grid::new(dims3, header.pixdim, header.origin)
        .map_err(|e| e.prefix("nifti geometry"))?;

    // permute from file order (first axis fastest) to memory order (last
    // axis fastest)
    let n = grid.len();
    if ncomp == 3 {
        let mut vectors = vec![[0.0f64; 3]; n];
        for x0 in 0..dims3[0] {
            for x1 in 0..dims3[1] {
                for x2 in 0..dims3[2] {
                    let m = grid.index(x0, x1, x2);
                    for c in 0..3 {
                        vectors[m][c] = values[file_index(dims3, [x0, x1, x2], c)];
                    }
                }
            }
        }
        return Ok(LoadedVolume::Field(DisplacementField::new(grid, vectors)?));
    }

    let mut scalars = vec![0.0f64; n];
    for x0 in 0..dims3[0] {
        for x1 in 0..dims3[1] {
            for x2 in 0..dims3[2] {
                scalars[grid.index(x0, x1, x2)] = values[file_index(dims3, [x0, x1, x2], 0)];
            }
        }
    }

    let integer_typed = matches!(header.datatype, DT_UINT8 | DT_INT16 | DT_INT32);
    if integer_typed {
        let mut labels = Vec::with_capacity(n);
        let mut max_label = 0u8;
        for &v in &scalars {
            if v.fract() != 0.0 || !(0.0..128.0).contains(&v) {
                return Err(Error::UnknownLabel(format!(
                    "integer-typed volume holds {v}, not a label in 0..128"
                )));
            }
            let l = v as u8;
            max_label = max_label.max(l);
            labels.push(l);
        }
        let num_classes = max_label as usize + 1;
        return Ok(LoadedVolume::Labels(LabelVolume::new(grid, labels, num_classes)?));
    }

    Ok(LoadedVolume::Scalar(Volume::new(grid, scalars)?))
}

fn build_header(grid: &Grid, datatype: i16, ncomp: usize) -> Vec<u8> {
    let mut h = vec![0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut h[offset::SIZEOF_HDR..], 348);
    let ndim: i16 = if ncomp == 3 { 4 } else { 3 };
    LittleEndian::write_i16(&mut h[offset::DIM..], ndim);
    for a in 0..3 {
        LittleEndian::write_i16(&mut h[offset::DIM + 2 * (a + 1)..], grid.dims[a] as i16);
    }
    if ncomp == 3 {
        LittleEndian::write_i16(&mut h[offset::DIM + 8..], 3);
    }
    let bitpix: i16 = match datatype {
        DT_UINT8 => 8,
        DT_FLOAT32 => 32,
        DT_FLOAT64 => 64,
        _ => unreachable!("writer emits uint8/float32 only"),
    };
    LittleEndian::write_i16(&mut h[offset::DATATYPE..], datatype);
    LittleEndian::write_i16(&mut h[offset::BITPIX..], bitpix);
    LittleEndian::write_f32(&mut h[offset::PIXDIM..], 1.0); // qfac
    for a in 0..3 {
        LittleEndian::write_f32(&mut h[offset::PIXDIM + 4 * (a + 1)..], grid.spacing[a] as f32);
    }
    LittleEndian::write_f32(&mut h[offset::VOX_OFFSET..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[offset::SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut h[offset::SCL_INTER..], 0.0);
    LittleEndian::write_i16(&mut h[offset::SFORM_CODE..], 1);
    for (r, row_off) in [offset::SROW_X, offset::SROW_Y, offset::SROW_Z].into_iter().enumerate() {
        LittleEndian::write_f32(&mut h[row_off + 4 * r..], grid.spacing[r] as f32);
        LittleEndian::write_f32(&mut h[row_off + 12..], grid.origin[r] as f32);
    }
    h[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(MAGIC);
    h
}

/// Serialize a volume to NIfTI-1 bytes (uncompressed). Scalar volumes and
/// fields are written as float32 (f64 payloads are downcast), labels as
/// uint8.
pub fn write_nifti_bytes(vol: &LoadedVolume) -> Vec<u8> {
    let (grid, datatype, ncomp) = match vol {
        LoadedVolume::Scalar(v) => (&v.grid, DT_FLOAT32, 1),
        LoadedVolume::Labels(v) => (&v.grid, DT_UINT8, 1),
        LoadedVolume::Field(v) => (&v.grid, DT_FLOAT32, 3),
    };
    let dims = grid.dims;
    let n = grid.len();
    let mut out = build_header(grid, datatype, ncomp);
    out.extend_from_slice(&[0u8; 4]); // no header extension
    out.reserve(n * ncomp * 4);
    match vol {
        LoadedVolume::Scalar(v) => {
            for x2 in 0..dims[2] {
                for x1 in 0..dims[1] {
                    for x0 in 0..dims[0] {
                        out.write_f32::<LittleEndian>(v.at(x0, x1, x2) as f32).unwrap();
                    }
                }
            }
        }
        LoadedVolume::Labels(v) => {
            for x2 in 0..dims[2] {
                for x1 in 0..dims[1] {
                    for x0 in 0..dims[0] {
                        out.push(v.at(x0, x1, x2));
                    }
                }
            }
        }
        LoadedVolume::Field(v) => {
            for c in 0..3 {
                for x2 in 0..dims[2] {
                    for x1 in 0..dims[1] {
                        for x0 in 0..dims[0] {
                            out.write_f32::<LittleEndian>(
                                v.vectors[grid.index(x0, x1, x2)][c] as f32,
                            )
                            .unwrap();
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn gzip_bytes(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::fast());
    enc.write_all(bytes).map_err(|e| Error::WriteError(format!("gzip encode: {e}")))?;
    enc.finish().map_err(|e| Error::WriteError(format!("gzip finish: {e}")))
}
