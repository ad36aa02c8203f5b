//! Per-voxel decay-model estimation from multi-b-value DWI and synthesis of
//! signals at arbitrary b-values.
//!
//! The model is the mono-exponential `S(b) = S0 * exp(-b * ADC)`, fit per
//! voxel as closed-form log-linear least squares on `ln S = ln S0 - b * ADC`.

use crate::error::{CdisError, Result};
use crate::volume::{Dims, Volume3D};

/// Signals are clamped to this floor before taking logs so zero or negative
/// (noise-driven) intensities never poison the fit.
pub const LOG_FLOOR: f64 = 1e-6;

/// A patient's co-registered multi-b-value DWI acquisition.
#[derive(Debug, Clone)]
pub struct DwiSeries {
    b_values: Vec<f64>,
    volumes: Vec<Volume3D>,
}

impl DwiSeries {
    /// Requires at least two strictly ascending, non-negative b-values and
    /// one volume per b-value, all sharing dims.
    pub fn new(b_values: Vec<f64>, volumes: Vec<Volume3D>) -> Result<Self> {
        if b_values.len() < 2 {
            return Err(CdisError::InsufficientData(format!(
                "a DWI series needs at least 2 b-values, got {}",
                b_values.len()
            )));
        }
        if b_values.len() != volumes.len() {
            return Err(CdisError::ShapeMismatch(format!(
                "{} b-values but {} volumes",
                b_values.len(),
                volumes.len()
            )));
        }
        if b_values.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(CdisError::InvalidParameter(format!(
                "b-values must be finite and non-negative: {b_values:?}"
            )));
        }
        if b_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CdisError::InvalidParameter(format!(
                "b-values must be strictly ascending: {b_values:?}"
            )));
        }
        let dims = volumes[0].dims();
        if let Some(v) = volumes.iter().find(|v| v.dims() != dims) {
            return Err(CdisError::ShapeMismatch(format!(
                "volumes mix dims {} and {}",
                dims,
                v.dims()
            )));
        }
        Ok(Self { b_values, volumes })
    }

    pub fn b_values(&self) -> &[f64] {
        &self.b_values
    }

    pub fn volumes(&self) -> &[Volume3D] {
        &self.volumes
    }

    pub fn dims(&self) -> Dims {
        self.volumes[0].dims()
    }

    /// The acquired volume for an exact b-value, if present.
    pub fn volume_at(&self, b: f64) -> Option<&Volume3D> {
        self.b_values
            .iter()
            .position(|&x| x == b)
            .map(|i| &self.volumes[i])
    }
}

/// Per-voxel decay-model parameters: `adc >= 0`, `s0 > 0`.
#[derive(Debug, Clone)]
pub struct AdcFit {
    adc: Volume3D,
    s0: Volume3D,
}

impl AdcFit {
    pub fn adc(&self) -> &Volume3D {
        &self.adc
    }

    pub fn s0(&self) -> &Volume3D {
        &self.s0
    }

    pub fn dims(&self) -> Dims {
        self.adc.dims()
    }
}

/// Closed-form log-linear least-squares fit of `(s0, adc)` at every voxel.
///
/// Negative fitted ADC (noise-induced) is clamped to zero; the intercept is
/// kept from the unclamped fit.
pub fn fit_adc(series: &DwiSeries) -> Result<AdcFit> {
    let bs = series.b_values();
    let n = bs.len() as f64;
    let b_mean = bs.iter().sum::<f64>() / n;
    let centered: Vec<f64> = bs.iter().map(|b| b - b_mean).collect();
    let sbb: f64 = centered.iter().map(|c| c * c).sum();

    let voxels = series.dims().len();
    let mut adc = vec![0.0; voxels];
    let mut s0 = vec![0.0; voxels];
    for i in 0..voxels {
        let mut y_sum = 0.0;
        let mut cy_sum = 0.0;
        for (vol, c) in series.volumes().iter().zip(&centered) {
            let y = vol.data()[i].max(LOG_FLOOR).ln();
            y_sum += y;
            cy_sum += c * y;
        }
        let slope = cy_sum / sbb;
        let intercept = y_sum / n - slope * b_mean;
        adc[i] = (-slope).max(0.0);
        s0[i] = intercept.exp();
    }

    let dims = series.dims();
    Ok(AdcFit {
        adc: Volume3D::from_vec(dims, adc)?,
        s0: Volume3D::from_vec(dims, s0)?,
    })
}

/// Evaluates `S = s0 * exp(-b * adc)` at every voxel. Output is strictly
/// positive.
pub fn synthesize_signal(fit: &AdcFit, b: f64) -> Result<Volume3D> {
    if !b.is_finite() || b < 0.0 {
        return Err(CdisError::InvalidParameter(format!(
            "synthetic b-value must be finite and non-negative, got {b}"
        )));
    }
    let data = fit
        .s0()
        .data()
        .iter()
        .zip(fit.adc().data())
        .map(|(&s0, &adc)| (s0 * (-b * adc).exp()).max(f64::MIN_POSITIVE))
        .collect();
    Volume3D::from_vec(fit.dims(), data)
}
