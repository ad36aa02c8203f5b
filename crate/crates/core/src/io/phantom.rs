//! Seeded phantom cohorts: centered spherical "tumors" with restricted
//! diffusion inside a uniform background, for desk-scale verification of
//! the fitting, mixing, and optimization paths.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffusion::DwiSeries;
use crate::error::{CdisError, Result};
use crate::metrics::DelineationCase;
use crate::volume::{Dims, Mask3D, Volume3D};

use super::manifest::{write_manifest, Cohort, CohortManifest, DwiEntry, ManifestEntry};
use super::rvf::{write_mask, write_volume};

/// Baseline b=0 signal of every phantom voxel; noise_sigma is relative to
/// this scale.
pub const PHANTOM_S0: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub n_patients: usize,
    pub b_values: Vec<f64>,
    /// Decay rate inside the tumor sphere. Lower than the background:
    /// restricted diffusion keeps the tumor brighter at high b.
    pub tumor_adc: f64,
    pub background_adc: f64,
    /// Sphere radius is drawn uniformly from this range, in voxels.
    pub radius_range: (f64, f64),
    /// Standard deviation of additive Gaussian noise; 0 is noise-free.
    pub noise_sigma: f64,
    /// Fully determines the generated cohort.
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(CdisError::PhantomSpec("need at least one patient".into()));
        }
        if self.b_values.len() < 2 || self.b_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CdisError::PhantomSpec(format!(
                "need at least 2 strictly ascending b-values, got {:?}",
                self.b_values
            )));
        }
        if self.b_values.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(CdisError::PhantomSpec(format!(
                "b-values must be finite and non-negative, got {:?}",
                self.b_values
            )));
        }
        if !(self.tumor_adc > 0.0 && self.background_adc > self.tumor_adc) {
            return Err(CdisError::PhantomSpec(format!(
                "need 0 < tumor_adc < background_adc, got ({}, {})",
                self.tumor_adc, self.background_adc
            )));
        }
        let (lo, hi) = self.radius_range;
        if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
            return Err(CdisError::PhantomSpec(format!(
                "need 0 < radius lo <= hi, got ({lo}, {hi})"
            )));
        }
        let half_extent = [self.dims.nx(), self.dims.ny(), self.dims.nz()]
            .iter()
            .map(|&n| (n - 1) as f64 / 2.0)
            .fold(f64::INFINITY, f64::min);
        if hi > half_extent {
            return Err(CdisError::PhantomSpec(format!(
                "radius {hi} exceeds the volume: max centered radius is {half_extent} for dims {}",
                self.dims
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(CdisError::PhantomSpec(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

fn patient_id(index: usize) -> String {
    format!("phantom{index:03}")
}

fn format_b(b: f64) -> String {
    if b == b.trunc() {
        format!("{}", b as i64)
    } else {
        format!("{b}")
    }
}

/// Generates the cohort in memory. The same seed always produces the same
/// cohort; patients carry no pCR labels.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));

    let d = spec.dims;
    let center = (
        (d.nx() - 1) as f64 / 2.0,
        (d.ny() - 1) as f64 / 2.0,
        (d.nz() - 1) as f64 / 2.0,
    );

    let mut cases = Vec::with_capacity(spec.n_patients);
    for p in 0..spec.n_patients {
        let (lo, hi) = spec.radius_range;
        let radius = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let r2 = radius * radius;

        let mut labels = vec![0u8; d.len()];
        for z in 0..d.nz() {
            for y in 0..d.ny() {
                for x in 0..d.nx() {
                    let dx = x as f64 - center.0;
                    let dy = y as f64 - center.1;
                    let dz = z as f64 - center.2;
                    if dx * dx + dy * dy + dz * dz <= r2 {
                        labels[d.index(x, y, z)] = 1;
                    }
                }
            }
        }

        let mut volumes = Vec::with_capacity(spec.b_values.len());
        for &b in &spec.b_values {
            let data: Vec<f64> = labels
                .iter()
                .map(|&inside| {
                    let adc = if inside == 1 {
                        spec.tumor_adc
                    } else {
                        spec.background_adc
                    };
                    let signal = PHANTOM_S0 * (-b * adc).exp();
                    match &noise {
                        Some(n) => signal + n.sample(&mut rng),
                        None => signal,
                    }
                })
                .collect();
            volumes.push(Volume3D::from_vec(d, data)?);
        }

        cases.push(DelineationCase {
            id: patient_id(p),
            series: DwiSeries::new(spec.b_values.clone(), volumes)?,
            tumor: Mask3D::from_vec(d, labels)?,
            roi: None,
        });
    }
    let labels = vec![None; cases.len()];
    Cohort::new(cases, labels)
}

/// Generates the cohort and writes it under `out_dir` as one RVF file per
/// volume plus a `manifest.json`. Returns the manifest path.
pub fn write_phantom(spec: &PhantomSpec, out_dir: &Path) -> Result<PathBuf> {
    let cohort = generate_phantom(spec)?;

    let mut entries = Vec::with_capacity(cohort.len());
    for case in cohort.cases() {
        let rel_dir = PathBuf::from(&case.id);
        let mut dwi = Vec::with_capacity(case.series.b_values().len());
        for (&b, vol) in case.series.b_values().iter().zip(case.series.volumes()) {
            let rel = rel_dir.join(format!("b{}.rvf", format_b(b)));
            write_volume(vol, &out_dir.join(&rel))?;
            dwi.push(DwiEntry {
                b_value: b,
                path: rel,
            });
        }
        let tumor_rel = rel_dir.join("tumor.rvf");
        write_mask(&case.tumor, &out_dir.join(&tumor_rel))?;
        entries.push(ManifestEntry {
            id: case.id.clone(),
            dwi,
            tumor_mask: tumor_rel,
            roi_mask: None,
            pcr_label: None,
        });
    }

    let manifest_path = out_dir.join("manifest.json");
    write_manifest(&CohortManifest { patients: entries }, &manifest_path)?;
    Ok(manifest_path)
}
