//! RVF volume files.
//!
//! Layout (all integers little-endian):
//! - bytes 0..4   magic `RVF1`
//! - bytes 4..8   dtype code: 1 = float32 volume, 2 = uint8 mask
//! - bytes 8..20  nx, ny, nz as uint32
//! - bytes 20..32 reserved, must be zero
//! - bytes 32..   payload in x-fastest order: little-endian f32 for
//!   volumes, one byte per voxel for masks
//!
//! Payloads round-trip bit-exactly, signed zeros included.

use std::fs;
use std::path::Path;

use crate::error::{CdisError, Result};
use crate::volume::{Dims, Mask3D, Volume3D};

use super::atomic_write;

const MAGIC: &[u8; 4] = b"RVF1";
const HEADER_LEN: usize = 32;
const DTYPE_F32: u32 = 1;
const DTYPE_MASK: u32 = 2;

/// Either payload kind an RVF file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum RvfImage {
    Volume(Volume3D),
    Mask(Mask3D),
}

fn header(dtype: u32, dims: Dims) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(HEADER_LEN);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&dtype.to_le_bytes());
    bytes.extend_from_slice(&(dims.nx() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dims.ny() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dims.nz() as u32).to_le_bytes());
    bytes.extend_from_slice(&[0u8; 12]);
    bytes
}

/// Intensities are stored as f32; values are narrowed with the usual
/// round-to-nearest cast.
pub fn write_volume(vol: &Volume3D, path: &Path) -> Result<()> {
    let mut bytes = header(DTYPE_F32, vol.dims());
    bytes.reserve(vol.data().len() * 4);
    for &v in vol.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn write_mask(mask: &Mask3D, path: &Path) -> Result<()> {
    let mut bytes = header(DTYPE_MASK, mask.dims());
    bytes.extend_from_slice(mask.data());
    atomic_write(path, &bytes)
}

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> CdisError {
    CdisError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn le_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn read_image(path: &Path) -> Result<RvfImage> {
    let bytes = fs::read(path)
        .map_err(|e| CdisError::io(format!("reading volume {}", path.display()), e))?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err(path, 0, "bad magic, expected 'RVF1'"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated header, need {HEADER_LEN} bytes"),
        ));
    }
    let dtype = le_u32(&bytes, 4);
    let (nx, ny, nz) = (
        le_u32(&bytes, 8) as usize,
        le_u32(&bytes, 12) as usize,
        le_u32(&bytes, 16) as usize,
    );
    let dims = Dims::new(nx, ny, nz).map_err(|e| format_err(path, 8, e.to_string()))?;
    if bytes[20..HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(format_err(path, 20, "reserved header bytes must be zero"));
    }

    let bytes_per_voxel = match dtype {
        DTYPE_F32 => 4,
        DTYPE_MASK => 1,
        other => return Err(format_err(path, 4, format!("unknown dtype code {other}"))),
    };
    let expected = dims
        .len()
        .checked_mul(bytes_per_voxel)
        .ok_or_else(|| format_err(path, 8, "payload size overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(format_err(
            path,
            HEADER_LEN + payload.len(),
            format!(
                "truncated payload: {} of {expected} bytes for dims {dims}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(format_err(
            path,
            HEADER_LEN + expected,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }

    match dtype {
        DTYPE_F32 => {
            let mut data = Vec::with_capacity(dims.len());
            for (i, chunk) in payload.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
                if !v.is_finite() {
                    return Err(format_err(
                        path,
                        HEADER_LEN + 4 * i,
                        format!("non-finite intensity {v}"),
                    ));
                }
                data.push(v);
            }
            Ok(RvfImage::Volume(Volume3D::from_vec(dims, data)?))
        }
        _ => {
            if let Some(i) = payload.iter().position(|&b| b > 1) {
                return Err(format_err(
                    path,
                    HEADER_LEN + i,
                    format!("mask byte {} is not 0 or 1", payload[i]),
                ));
            }
            Ok(RvfImage::Mask(Mask3D::from_vec(dims, payload.to_vec())?))
        }
    }
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    match read_image(path)? {
        RvfImage::Volume(v) => Ok(v),
        RvfImage::Mask(_) => Err(format_err(path, 4, "expected a float32 volume, found a mask")),
    }
}

pub fn read_mask(path: &Path) -> Result<Mask3D> {
    match read_image(path)? {
        RvfImage::Mask(m) => Ok(m),
        RvfImage::Volume(_) => {
            Err(format_err(path, 4, "expected a mask, found a float32 volume"))
        }
    }
}
