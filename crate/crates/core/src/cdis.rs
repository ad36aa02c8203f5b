//! CDI^s signal mixing, dynamic-range calibration, and multiparametric
//! fusion.
//!
//! The mixed signal is an exponent-weighted product over native and
//! synthesized diffusion signals, `prod_i S_i^rho_i`, evaluated as
//! `exp(sum_i rho_i * ln S_i)` so large exponent vectors stay stable. The
//! exponent vector rho is what the simplex optimizer tunes.

use serde::{Deserialize, Serialize};

use crate::diffusion::{fit_adc, synthesize_signal, DwiSeries, LOG_FLOOR};
use crate::error::{CdisError, Result};
use crate::volume::{standardize, Volume3D, STANDARD_DIMS};

/// Keeps `exp` of the mixed log-signal inside the finite f64 range.
const LOG_SUM_MIN: f64 = -744.0;
const LOG_SUM_MAX: f64 = 709.0;

/// Percentile window used to clip intensities before mapping to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    #[serde(rename = "low")]
    low_percentile: f64,
    #[serde(rename = "high")]
    high_percentile: f64,
}

impl CalibrationSpec {
    /// Requires `0 <= low < high <= 100`.
    pub fn new(low_percentile: f64, high_percentile: f64) -> Result<Self> {
        if !(low_percentile.is_finite() && high_percentile.is_finite())
            || low_percentile < 0.0
            || high_percentile > 100.0
            || low_percentile >= high_percentile
        {
            return Err(CdisError::InvalidParameter(format!(
                "calibration percentiles need 0 <= low < high <= 100, got ({low_percentile}, {high_percentile})"
            )));
        }
        Ok(Self {
            low_percentile,
            high_percentile,
        })
    }

    /// The full dynamic range: pure min-max normalization.
    pub fn full_range() -> Self {
        Self {
            low_percentile: 0.0,
            high_percentile: 100.0,
        }
    }

    pub fn low(&self) -> f64 {
        self.low_percentile
    }

    pub fn high(&self) -> f64 {
        self.high_percentile
    }

    pub(crate) fn validate(&self) -> Result<()> {
        Self::new(self.low_percentile, self.high_percentile).map(|_| ())
    }
}

impl Default for CalibrationSpec {
    /// (0.1, 99.9): robust to isolated hot voxels.
    fn default() -> Self {
        Self {
            low_percentile: 0.1,
            high_percentile: 99.9,
        }
    }
}

/// Everything that defines one CDI^s computation: which native b-values to
/// take from the series, which to synthesize, the per-signal exponents
/// (native signals first, in declared order), and the calibration window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdisConfig {
    pub native_b: Vec<f64>,
    pub synthetic_b: Vec<f64>,
    pub exponents: Vec<f64>,
    pub calibration: CalibrationSpec,
}

impl CdisConfig {
    pub fn new(
        native_b: Vec<f64>,
        synthetic_b: Vec<f64>,
        exponents: Vec<f64>,
        calibration: CalibrationSpec,
    ) -> Result<Self> {
        let config = Self {
            native_b,
            synthetic_b,
            exponents,
            calibration,
        };
        config.validate()?;
        Ok(config)
    }

    /// Unit exponents over the given signals: the unoptimized baseline.
    pub fn unit(native_b: Vec<f64>, synthetic_b: Vec<f64>, calibration: CalibrationSpec) -> Result<Self> {
        let n = native_b.len() + synthetic_b.len();
        Self::new(native_b, synthetic_b, vec![1.0; n], calibration)
    }

    pub fn signal_count(&self) -> usize {
        self.native_b.len() + self.synthetic_b.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal_count() == 0 {
            return Err(CdisError::InvalidConfig(
                "at least one native or synthetic signal is required".into(),
            ));
        }
        if self.exponents.len() != self.signal_count() {
            return Err(CdisError::InvalidConfig(format!(
                "{} exponents for {} signals",
                self.exponents.len(),
                self.signal_count()
            )));
        }
        if self.exponents.iter().any(|e| !e.is_finite()) {
            return Err(CdisError::InvalidConfig(format!(
                "non-finite exponent in {:?}",
                self.exponents
            )));
        }
        for b in self.native_b.iter().chain(&self.synthetic_b) {
            if !b.is_finite() || *b < 0.0 {
                return Err(CdisError::InvalidConfig(format!(
                    "b-values must be finite and non-negative, got {b}"
                )));
            }
        }
        self.calibration.validate()
    }

    /// Same config with a different exponent vector (the optimizer's move).
    pub fn with_exponents(&self, exponents: Vec<f64>) -> Result<Self> {
        Self::new(
            self.native_b.clone(),
            self.synthetic_b.clone(),
            exponents,
            self.calibration,
        )
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(json).map_err(|e| CdisError::Parse(format!("CdisConfig: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("CdisConfig is always serializable")
    }
}

/// One named channel of a fused multiparametric volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub volume: Volume3D,
}

/// Standardized multi-channel stack: channel 0 is the calibrated CDI^s,
/// later channels are calibrated native DWI volumes. All channels are
/// 224x224x25.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiparametricVolume {
    channels: Vec<Channel>,
}

impl MultiparametricVolume {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.len() < 2 {
            return Err(CdisError::InvalidConfig(format!(
                "a multiparametric volume needs at least 2 channels, got {}",
                channels.len()
            )));
        }
        if let Some(c) = channels.iter().find(|c| c.volume.dims() != STANDARD_DIMS) {
            return Err(CdisError::ShapeMismatch(format!(
                "channel '{}' has dims {}, expected {}",
                c.name,
                c.volume.dims(),
                STANDARD_DIMS
            )));
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }
}

/// Exponent-weighted product of signals, `exp(sum_i rho_i ln S_i)` per
/// voxel. Signals are clamped to [`LOG_FLOOR`] before the log.
pub fn mix_signals(signals: &[&Volume3D], exponents: &[f64]) -> Result<Volume3D> {
    if signals.is_empty() {
        return Err(CdisError::ShapeMismatch("no signals to mix".into()));
    }
    if signals.len() != exponents.len() {
        return Err(CdisError::ShapeMismatch(format!(
            "{} signals but {} exponents",
            signals.len(),
            exponents.len()
        )));
    }
    let dims = signals[0].dims();
    if let Some(s) = signals.iter().find(|s| s.dims() != dims) {
        return Err(CdisError::ShapeMismatch(format!(
            "signals mix dims {} and {}",
            dims,
            s.dims()
        )));
    }

    let mut log_sum = vec![0.0f64; dims.len()];
    for (signal, &rho) in signals.iter().zip(exponents) {
        for (acc, &s) in log_sum.iter_mut().zip(signal.data()) {
            *acc += rho * s.max(LOG_FLOOR).ln();
        }
    }
    let data = log_sum
        .into_iter()
        .map(|s| s.clamp(LOG_SUM_MIN, LOG_SUM_MAX).exp())
        .collect();
    Volume3D::from_vec(dims, data)
}

/// Percentile of pre-sorted values under the inclusive linear-interpolation
/// definition: rank `p/100 * (n-1)` interpolated between order statistics.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Clips to the spec's percentile window and maps affinely onto [0, 1].
/// A degenerate window (equal percentile values) maps to all zeros so
/// optimizer trial points never abort a cohort evaluation.
pub fn calibrate(vol: &Volume3D, spec: &CalibrationSpec) -> Result<Volume3D> {
    let mut sorted = vol.data().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("volume data is finite"));
    let p_low = percentile_sorted(&sorted, spec.low());
    let p_high = percentile_sorted(&sorted, spec.high());

    let data = if p_high > p_low {
        let range = p_high - p_low;
        vol.data()
            .iter()
            .map(|&v| (v.clamp(p_low, p_high) - p_low) / range)
            .collect()
    } else {
        vec![0.0; vol.data().len()]
    };
    Volume3D::from_vec(vol.dims(), data)
}

/// The full per-patient CDI^s computation: gather native volumes, synthesize
/// the configured b-values from the fitted decay model, mix under the
/// config's exponents, and calibrate.
pub fn compute_cdis(series: &DwiSeries, config: &CdisConfig) -> Result<Volume3D> {
    config.validate()?;
    let mut signals: Vec<&Volume3D> = Vec::with_capacity(config.signal_count());
    for &b in &config.native_b {
        signals.push(series.volume_at(b).ok_or_else(|| {
            CdisError::InvalidConfig(format!(
                "native b-value {b} not acquired (series has {:?})",
                series.b_values()
            ))
        })?);
    }

    let synthesized: Vec<Volume3D> = if config.synthetic_b.is_empty() {
        Vec::new()
    } else {
        let fit = fit_adc(series)?;
        config
            .synthetic_b
            .iter()
            .map(|&b| synthesize_signal(&fit, b))
            .collect::<Result<_>>()?
    };
    signals.extend(synthesized.iter());

    let mixed = mix_signals(&signals, &config.exponents)?;
    calibrate(&mixed, &config.calibration)
}

/// Stacks the calibrated CDI^s with calibrated native DWI channels, each
/// standardized to 224x224x25. Channel order follows `dwi_channels`.
pub fn fuse_multiparametric(
    cdis: &Volume3D,
    series: &DwiSeries,
    dwi_channels: &[f64],
    calibration: &CalibrationSpec,
) -> Result<MultiparametricVolume> {
    let mut channels = vec![Channel {
        name: "cdis".into(),
        volume: standardize(cdis)?,
    }];
    for &b in dwi_channels {
        let native = series.volume_at(b).ok_or_else(|| {
            CdisError::InvalidConfig(format!(
                "DWI channel b-value {b} not acquired (series has {:?})",
                series.b_values()
            ))
        })?;
        channels.push(Channel {
            name: format!("dwi_b{}", format_b(b)),
            volume: standardize(&calibrate(native, calibration)?)?,
        });
    }
    MultiparametricVolume::new(channels)
}

fn format_b(b: f64) -> String {
    if b == b.trunc() {
        format!("{}", b as i64)
    } else {
        format!("{b}")
    }
}
