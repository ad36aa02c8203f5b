//! RVF-T tensor files: the classifier-ready export of a fused
//! multiparametric volume.
//!
//! Layout (little-endian):
//! - bytes 0..4  magic `RVT1`
//! - bytes 4..8  channel count C as uint32 (>= 1)
//! - then C dims triples, nx/ny/nz as uint32 (12 bytes each)
//! - payload: channels-first, each channel's voxels in x-fastest order as
//!   f32 — for standardized channels that is a (C, 25, 224, 224) tensor
//!   read as a C-order array

use std::fs;
use std::path::Path;

use crate::cdis::MultiparametricVolume;
use crate::error::{CdisError, Result};
use crate::volume::{Dims, Volume3D};

use super::atomic_write;

const MAGIC: &[u8; 4] = b"RVT1";

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> CdisError {
    CdisError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Writes raw channels; [`export_tensor`] is the fused-volume entry point.
pub fn write_tensor_channels(channels: &[Volume3D], path: &Path) -> Result<()> {
    if channels.is_empty() {
        return Err(CdisError::InvalidParameter(
            "a tensor needs at least one channel".into(),
        ));
    }
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    for c in channels {
        bytes.extend_from_slice(&(c.dims().nx() as u32).to_le_bytes());
        bytes.extend_from_slice(&(c.dims().ny() as u32).to_le_bytes());
        bytes.extend_from_slice(&(c.dims().nz() as u32).to_le_bytes());
    }
    for c in channels {
        for &v in c.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

/// Channel 0 is the CDI^s by construction; order follows the fused volume.
pub fn export_tensor(mp: &MultiparametricVolume, path: &Path) -> Result<()> {
    let channels: Vec<Volume3D> = mp.channels().iter().map(|c| c.volume.clone()).collect();
    write_tensor_channels(&channels, path)
}

pub fn read_tensor(path: &Path) -> Result<Vec<Volume3D>> {
    let bytes = fs::read(path)
        .map_err(|e| CdisError::io(format!("reading tensor {}", path.display()), e))?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err(path, 0, "bad magic, expected 'RVT1'"));
    }
    if bytes.len() < 8 {
        return Err(format_err(path, bytes.len(), "truncated channel count"));
    }
    let n_channels = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if n_channels == 0 {
        return Err(format_err(path, 4, "tensor declares zero channels"));
    }

    let dims_end = 8 + 12 * n_channels;
    if bytes.len() < dims_end {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated dims table for {n_channels} channels"),
        ));
    }
    let mut dims = Vec::with_capacity(n_channels);
    for c in 0..n_channels {
        let at = 8 + 12 * c;
        let read = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let d = Dims::new(
            read(at) as usize,
            read(at + 4) as usize,
            read(at + 8) as usize,
        )
        .map_err(|e| format_err(path, at, e.to_string()))?;
        dims.push(d);
    }

    let expected: usize = dims.iter().map(|d| d.len() * 4).sum();
    let payload = &bytes[dims_end..];
    if payload.len() != expected {
        let offset = dims_end + payload.len().min(expected);
        return Err(format_err(
            path,
            offset,
            format!("payload holds {} bytes, expected {expected}", payload.len()),
        ));
    }

    let mut channels = Vec::with_capacity(n_channels);
    let mut cursor = 0;
    for d in dims {
        let mut data = Vec::with_capacity(d.len());
        for i in 0..d.len() {
            let at = cursor + 4 * i;
            let v = f32::from_le_bytes(payload[at..at + 4].try_into().expect("4 bytes")) as f64;
            if !v.is_finite() {
                return Err(format_err(
                    path,
                    dims_end + at,
                    format!("non-finite value {v}"),
                ));
            }
            data.push(v);
        }
        cursor += 4 * d.len();
        channels.push(Volume3D::from_vec(d, data)?);
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn dims(nx: usize, ny: usize, nz: usize) -> Dims {
        Dims::new(nx, ny, nz).unwrap()
    }

    #[test]
    fn payload_size_matches_channel_count_arithmetic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.rvt");
        let d = dims(5, 4, 3);
        let channels = vec![
            Volume3D::constant(d, 0.25).unwrap(),
            Volume3D::constant(d, 0.75).unwrap(),
        ];
        write_tensor_channels(&channels, &path).unwrap();
        let len = fs::read(&path).unwrap().len();
        assert_eq!(len, 8 + 2 * 12 + 2 * d.len() * 4);
    }

    #[test]
    fn truncation_and_magic_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.rvt");
        fs::write(&path, b"RVF1....").unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(CdisError::Format { offset: 0, .. })
        ));

        let good = dir.path().join("ok.rvt");
        write_tensor_channels(&[Volume3D::constant(dims(2, 2, 1), 1.0).unwrap()], &good).unwrap();
        let mut bytes = fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&good, &bytes).unwrap();
        assert!(matches!(read_tensor(&good), Err(CdisError::Format { .. })));
    }

    proptest! {
        /// Export then re-import equals the original, bit for bit.
        #[test]
        fn tensor_round_trip_bit_exact(
            chans in proptest::collection::vec(
                proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO | proptest::num::f32::NEGATIVE, 6),
                1..4,
            )
        ) {
            prop_assume!(chans.iter().flatten().all(|v| v.is_finite()));
            let d = dims(3, 2, 1);
            let channels: Vec<Volume3D> = chans
                .iter()
                .map(|c| Volume3D::from_vec(d, c.iter().map(|&v| v as f64).collect()).unwrap())
                .collect();
            let dir = tempdir().unwrap();
            let path = dir.path().join("t.rvt");
            write_tensor_channels(&channels, &path).unwrap();
            let back = read_tensor(&path).unwrap();
            prop_assert_eq!(back.len(), channels.len());
            for (a, b) in back.iter().zip(&channels) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
