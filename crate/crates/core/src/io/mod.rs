//! On-disk formats and cohort assembly: RVF volumes, RVF-T tensors, JSON
//! manifests, and the seeded phantom generator used for desk-scale
//! verification.

// TODO: import adapter for NIfTI/DICOM volumes; RVF is the only on-disk
// format for now.

mod manifest;
mod phantom;
mod rvf;
mod tensor;

pub use manifest::{
    load_cohort, read_manifest, write_manifest, ClassCounts, Cohort, CohortManifest, DwiEntry,
    ManifestEntry,
};
pub use phantom::{generate_phantom, write_phantom, PhantomSpec, PHANTOM_S0};
pub use rvf::{read_image, read_mask, read_volume, write_mask, write_volume, RvfImage};
pub use tensor::{export_tensor, read_tensor, write_tensor_channels};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cdis::CdisConfig;
use crate::error::{CdisError, Result};

/// Writes via a temp file in the target directory plus rename, so an
/// interrupted run never leaves a torn file behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)
            .map_err(|e| CdisError::io(format!("creating directory {}", dir.display()), e))?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| CdisError::io(format!("creating temp file for {}", path.display()), e))?;
    tmp.write_all(bytes)
        .map_err(|e| CdisError::io(format!("writing {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| CdisError::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(())
}

pub fn read_config(path: &Path) -> Result<CdisConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CdisError::io(format!("reading config {}", path.display()), e))?;
    CdisConfig::from_json_str(&text)
        .map_err(|e| CdisError::Parse(format!("{}: {e}", path.display())))
}

pub fn write_config(config: &CdisConfig, path: &Path) -> Result<()> {
    let mut json = config.to_json_string();
    json.push('\n');
    atomic_write(path, json.as_bytes())
}
