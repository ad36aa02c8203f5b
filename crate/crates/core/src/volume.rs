//! Dense 3D voxel containers and dimensional standardization.
//!
//! Volumes are immutable after construction; everything here is a pure
//! function over the flat `x`-fastest data buffer, so values index as
//! `data[x + nx * (y + ny * z)]`.

use crate::error::{CdisError, Result};

/// Fixed target shape every fused channel is resampled to.
pub const STANDARD_DIMS: Dims = Dims {
    nx: 224,
    ny: 224,
    nz: 25,
};

/// Voxel counts per axis. Always at least 1 on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    nx: usize,
    ny: usize,
    nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(CdisError::InvalidDimensions(format!(
                "every axis needs at least one voxel, got {nx}x{ny}x{nz}"
            )));
        }
        nx.checked_mul(ny)
            .and_then(|p| p.checked_mul(nz))
            .ok_or_else(|| {
                CdisError::InvalidDimensions(format!("voxel count {nx}x{ny}x{nz} overflows"))
            })?;
        Ok(Self { nx, ny, nz })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false // all axes >= 1 by construction
    }

    /// Flat index of voxel (x, y, z) in x-fastest order.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Dense grid of finite 64-bit intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    data: Vec<f64>,
}

impl Volume3D {
    /// Wraps a flat x-fastest buffer. Rejects length mismatches and any
    /// non-finite element.
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(CdisError::ShapeMismatch(format!(
                "volume buffer holds {} values but dims {} need {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CdisError::InvalidParameter(format!(
                "non-finite intensity {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn constant(dims: Dims, value: f64) -> Result<Self> {
        Self::from_vec(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    /// (min, max) over all voxels.
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Dense grid of {0, 1} labels, same layout as [`Volume3D`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3D {
    dims: Dims,
    data: Vec<u8>,
}

impl Mask3D {
    pub fn from_vec(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(CdisError::ShapeMismatch(format!(
                "mask buffer holds {} values but dims {} need {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(CdisError::InvalidParameter(format!(
                "mask label {} at flat index {pos} is not 0 or 1",
                data[pos]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: u8) -> Result<Self> {
        Self::from_vec(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// One linear-interpolation tap along a single axis: output index `i` reads
/// `src[i0] * (1 - w) + src[i1] * w`.
struct AxisTap {
    i0: usize,
    i1: usize,
    w: f64,
}

/// Corner-aligned source coordinate for output index `i`:
/// `i * (src_n - 1) / (dst_n - 1)` when the target axis has more than one
/// voxel, otherwise the source axis center. Degenerate source axes (n = 1)
/// collapse to coordinate 0 and replicate.
fn source_coord(i: usize, src_n: usize, dst_n: usize) -> f64 {
    let coord = if dst_n > 1 {
        (i as f64) * ((src_n - 1) as f64) / ((dst_n - 1) as f64)
    } else {
        (src_n - 1) as f64 / 2.0
    };
    coord.clamp(0.0, (src_n - 1) as f64)
}

fn linear_taps(src_n: usize, dst_n: usize) -> Vec<AxisTap> {
    (0..dst_n)
        .map(|i| {
            let c = source_coord(i, src_n, dst_n);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(src_n - 1);
            AxisTap { i0, i1, w: c - i0 as f64 }
        })
        .collect()
}

fn nearest_taps(src_n: usize, dst_n: usize) -> Vec<usize> {
    (0..dst_n)
        .map(|i| (source_coord(i, src_n, dst_n).round() as usize).min(src_n - 1))
        .collect()
}

/// Trilinear resampling onto `target` under the corner-aligned coordinate
/// map. Samples never leave the source grid, so the output range is a
/// subset of the input range and identity targets reproduce the input
/// exactly.
pub fn resample_trilinear(vol: &Volume3D, target: Dims) -> Result<Volume3D> {
    let src = vol.dims();
    let xt = linear_taps(src.nx(), target.nx());
    let yt = linear_taps(src.ny(), target.ny());
    let zt = linear_taps(src.nz(), target.nz());

    let mut out = Vec::with_capacity(target.len());
    let data = vol.data();
    for z in &zt {
        let (wz0, wz1) = (1.0 - z.w, z.w);
        for y in &yt {
            let (wy0, wy1) = (1.0 - y.w, y.w);
            let base00 = src.index(0, y.i0, z.i0);
            let base10 = src.index(0, y.i1, z.i0);
            let base01 = src.index(0, y.i0, z.i1);
            let base11 = src.index(0, y.i1, z.i1);
            for x in &xt {
                let (wx0, wx1) = (1.0 - x.w, x.w);
                let c00 = data[base00 + x.i0] * wx0 + data[base00 + x.i1] * wx1;
                let c10 = data[base10 + x.i0] * wx0 + data[base10 + x.i1] * wx1;
                let c01 = data[base01 + x.i0] * wx0 + data[base01 + x.i1] * wx1;
                let c11 = data[base11 + x.i0] * wx0 + data[base11 + x.i1] * wx1;
                out.push((c00 * wy0 + c10 * wy1) * wz0 + (c01 * wy0 + c11 * wy1) * wz1);
            }
        }
    }
    Volume3D::from_vec(target, out)
}

/// Nearest-neighbor mask resampling under the same coordinate map as
/// [`resample_trilinear`]. Labels are copied, never blended, so the output
/// value set is a subset of the input's.
pub fn resample_nearest(mask: &Mask3D, target: Dims) -> Result<Mask3D> {
    let src = mask.dims();
    let xt = nearest_taps(src.nx(), target.nx());
    let yt = nearest_taps(src.ny(), target.ny());
    let zt = nearest_taps(src.nz(), target.nz());

    let mut out = Vec::with_capacity(target.len());
    let data = mask.data();
    for &z in &zt {
        for &y in &yt {
            let base = src.index(0, y, z);
            for &x in &xt {
                out.push(data[base + x]);
            }
        }
    }
    Mask3D::from_vec(target, out)
}

/// Resamples onto the fixed 224x224x25 cube every classifier-ready channel
/// uses.
pub fn standardize(vol: &Volume3D) -> Result<Volume3D> {
    resample_trilinear(vol, STANDARD_DIMS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(nx: usize, ny: usize, nz: usize) -> Dims {
        Dims::new(nx, ny, nz).unwrap()
    }

    #[test]
    fn zero_axis_is_rejected() {
        assert!(matches!(
            Dims::new(0, 4, 4),
            Err(CdisError::InvalidDimensions(_))
        ));
        assert!(matches!(
            Dims::new(3, 0, 1),
            Err(CdisError::InvalidDimensions(_))
        ));
    }

    #[test]
    fn volume_rejects_non_finite_and_bad_length() {
        let d = dims(2, 1, 1);
        assert!(matches!(
            Volume3D::from_vec(d, vec![1.0, f64::NAN]),
            Err(CdisError::InvalidParameter(_))
        ));
        assert!(matches!(
            Volume3D::from_vec(d, vec![1.0]),
            Err(CdisError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(matches!(
            Mask3D::from_vec(dims(1, 1, 1), vec![2]),
            Err(CdisError::InvalidParameter(_))
        ));
    }

    #[test]
    fn constant_volume_resamples_to_constant() {
        let vol = Volume3D::constant(dims(4, 3, 2), 5.0).unwrap();
        let out = resample_trilinear(&vol, dims(7, 5, 9)).unwrap();
        assert!(out.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn upsample_line_hits_hand_computed_midpoint() {
        // 2x1x1 [0, 10] -> 3x1x1 samples source coordinates 0, 0.5, 1.
        let vol = Volume3D::from_vec(dims(2, 1, 1), vec![0.0, 10.0]).unwrap();
        let out = resample_trilinear(&vol, dims(3, 1, 1)).unwrap();
        assert_eq!(out.data(), &[0.0, 5.0, 10.0]);
    }

    #[test]
    fn identity_resample_is_exact() {
        let d = dims(5, 4, 3);
        let data: Vec<f64> = (0..d.len()).map(|i| (i as f64).sin() * 10.0).collect();
        let vol = Volume3D::from_vec(d, data).unwrap();
        let out = resample_trilinear(&vol, d).unwrap();
        assert_eq!(out, vol);
    }

    #[test]
    fn nearest_line_example() {
        // 2x1x1 [0, 1] -> 4x1x1: source coordinates 0, 1/3, 2/3, 1.
        let mask = Mask3D::from_vec(dims(2, 1, 1), vec![0, 1]).unwrap();
        let out = resample_nearest(&mask, dims(4, 1, 1)).unwrap();
        assert_eq!(out.data(), &[0, 0, 1, 1]);
    }

    #[test]
    fn nearest_identity_and_all_ones() {
        let d = dims(3, 2, 2);
        let data = vec![0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0, 1];
        let mask = Mask3D::from_vec(d, data).unwrap();
        assert_eq!(resample_nearest(&mask, d).unwrap(), mask);

        let ones = Mask3D::filled(dims(2, 2, 2), 1).unwrap();
        let out = resample_nearest(&ones, dims(5, 3, 4)).unwrap();
        assert!(out.data().iter().all(|&v| v == 1));
    }

    #[test]
    fn standardize_targets_fixed_cube() {
        let vol = Volume3D::constant(dims(100, 100, 20), 2.5).unwrap();
        let out = standardize(&vol).unwrap();
        assert_eq!(out.dims(), STANDARD_DIMS);
        assert!(out.data().iter().all(|&v| v == 2.5));

        let std_in = Volume3D::constant(STANDARD_DIMS, 1.0).unwrap();
        assert_eq!(standardize(&std_in).unwrap(), std_in);
    }

    fn arb_dims() -> impl Strategy<Value = Dims> {
        (1usize..6, 1usize..6, 1usize..6).prop_map(|(x, y, z)| dims(x, y, z))
    }

    fn arb_volume() -> impl Strategy<Value = Volume3D> {
        arb_dims().prop_flat_map(|d| {
            proptest::collection::vec(-100.0f64..100.0, d.len())
                .prop_map(move |data| Volume3D::from_vec(d, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn trilinear_respects_input_extrema(vol in arb_volume(), target in arb_dims()) {
            let (lo, hi) = vol.min_max();
            let out = resample_trilinear(&vol, target).unwrap();
            // Tiny slack for the weighted-sum rounding.
            let eps = 1e-12 * (1.0 + hi.abs().max(lo.abs()));
            for &v in out.data() {
                prop_assert!(v >= lo - eps && v <= hi + eps);
            }
        }

        #[test]
        fn trilinear_identity_is_bitwise(vol in arb_volume()) {
            let out = resample_trilinear(&vol, vol.dims()).unwrap();
            prop_assert_eq!(out, vol);
        }

        #[test]
        fn trilinear_preserves_constants(target in arb_dims(), src in arb_dims(), c in -50.0f64..50.0) {
            let vol = Volume3D::constant(src, c).unwrap();
            let out = resample_trilinear(&vol, target).unwrap();
            prop_assert!(out.data().iter().all(|&v| v == c));
        }

        #[test]
        fn nearest_preserves_value_set(target in arb_dims(), src in arb_dims(), fill in 0u8..=1) {
            let data: Vec<u8> = (0..src.len()).map(|i| ((i as u8) ^ fill) & 1).collect();
            let mask = Mask3D::from_vec(src, data).unwrap();
            let out = resample_nearest(&mask, target).unwrap();
            for &v in out.data() {
                prop_assert!(mask.data().contains(&v));
            }
        }
    }
}
