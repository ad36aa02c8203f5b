//! Cohort manifests: a JSON index of per-patient DWI volumes, masks, and
//! pCR labels. Paths resolve relative to the manifest's directory.
//!
//! Patients with an absent (`null` or missing) `pcr_label` stay in the
//! cohort for delineation work but are excluded from every labeled view.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::DwiSeries;
use crate::error::{CdisError, Result};
use crate::metrics::DelineationCase;

use super::rvf::{read_mask, read_volume};
use super::atomic_write;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DwiEntry {
    pub b_value: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub dwi: Vec<DwiEntry>,
    pub tumor_mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi_mask: Option<PathBuf>,
    #[serde(default)]
    pub pcr_label: Option<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortManifest {
    pub patients: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<()> {
        if self.patients.is_empty() {
            return Err(CdisError::EmptyCohort);
        }
        let mut seen = HashSet::new();
        for p in &self.patients {
            if !seen.insert(p.id.as_str()) {
                return Err(CdisError::Parse(format!("duplicate patient id '{}'", p.id)));
            }
            if p.dwi.is_empty() {
                return Err(CdisError::Parse(format!(
                    "patient '{}' lists no DWI volumes",
                    p.id
                )));
            }
            if p.dwi.windows(2).any(|w| w[0].b_value >= w[1].b_value) {
                return Err(CdisError::Parse(format!(
                    "patient '{}': b-values must be strictly ascending",
                    p.id
                )));
            }
            if let Some(label) = p.pcr_label {
                if label > 1 {
                    return Err(CdisError::Parse(format!(
                        "patient '{}': pcr_label must be 0, 1, or null, got {label}",
                        p.id
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<CohortManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| CdisError::io(format!("reading manifest {}", path.display()), e))?;
    let manifest: CohortManifest = serde_json::from_str(&text)
        .map_err(|e| CdisError::Parse(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &CohortManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let mut json =
        serde_json::to_string_pretty(manifest).expect("manifest is always serializable");
    json.push('\n');
    atomic_write(path, json.as_bytes())
}

/// Labeled / unlabeled composition of a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub class0: usize,
    pub class1: usize,
    pub unlabeled: usize,
}

impl ClassCounts {
    pub fn labeled(&self) -> usize {
        self.class0 + self.class1
    }

    /// (class-0, class-1) shares of the labeled patients, as percentages.
    pub fn proportions(&self) -> (f64, f64) {
        let n = self.labeled() as f64;
        (
            100.0 * self.class0 as f64 / n,
            100.0 * self.class1 as f64 / n,
        )
    }
}

impl std::fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.labeled() > 0 {
            let (p0, p1) = self.proportions();
            write!(
                f,
                "class 0: {} ({p0:.1}%), class 1: {} ({p1:.1}%), unlabeled: {}",
                self.class0, self.class1, self.unlabeled
            )
        } else {
            write!(f, "no labeled patients, unlabeled: {}", self.unlabeled)
        }
    }
}

/// A loaded cohort: delineation inputs plus the optional pCR label, in
/// manifest order.
#[derive(Debug, Clone)]
pub struct Cohort {
    cases: Vec<DelineationCase>,
    pcr_labels: Vec<Option<u8>>,
}

impl Cohort {
    pub fn new(cases: Vec<DelineationCase>, pcr_labels: Vec<Option<u8>>) -> Result<Self> {
        if cases.is_empty() {
            return Err(CdisError::EmptyCohort);
        }
        if cases.len() != pcr_labels.len() {
            return Err(CdisError::ShapeMismatch(format!(
                "{} cases but {} labels",
                cases.len(),
                pcr_labels.len()
            )));
        }
        Ok(Self { cases, pcr_labels })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn cases(&self) -> &[DelineationCase] {
        &self.cases
    }

    pub fn pcr_labels(&self) -> &[Option<u8>] {
        &self.pcr_labels
    }

    /// Patients with a pCR label, for classifier-facing work.
    pub fn labeled(&self) -> impl Iterator<Item = (&DelineationCase, u8)> {
        self.cases
            .iter()
            .zip(&self.pcr_labels)
            .filter_map(|(case, label)| label.map(|l| (case, l)))
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts {
            class0: 0,
            class1: 0,
            unlabeled: 0,
        };
        for label in &self.pcr_labels {
            match label {
                Some(0) => counts.class0 += 1,
                Some(_) => counts.class1 += 1,
                None => counts.unlabeled += 1,
            }
        }
        counts
    }
}

/// Parses the manifest and loads every referenced volume. All patient
/// volumes must exist and agree on dims with their masks.
pub fn load_cohort(manifest_path: &Path) -> Result<Cohort> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut cases = Vec::with_capacity(manifest.patients.len());
    let mut labels = Vec::with_capacity(manifest.patients.len());
    for entry in &manifest.patients {
        let case = load_patient(base, entry)
            .map_err(|e| CdisError::for_patient(&entry.id, e))?;
        cases.push(case);
        labels.push(entry.pcr_label);
    }
    Cohort::new(cases, labels)
}

fn load_patient(base: &Path, entry: &ManifestEntry) -> Result<DelineationCase> {
    let mut b_values = Vec::with_capacity(entry.dwi.len());
    let mut volumes = Vec::with_capacity(entry.dwi.len());
    for dwi in &entry.dwi {
        b_values.push(dwi.b_value);
        volumes.push(read_volume(&base.join(&dwi.path))?);
    }
    let series = DwiSeries::new(b_values, volumes)?;

    let tumor = read_mask(&base.join(&entry.tumor_mask))?;
    if tumor.dims() != series.dims() {
        return Err(CdisError::ShapeMismatch(format!(
            "tumor mask dims {} do not match series dims {}",
            tumor.dims(),
            series.dims()
        )));
    }
    let roi = entry
        .roi_mask
        .as_ref()
        .map(|p| read_mask(&base.join(p)))
        .transpose()?;
    if let Some(roi) = &roi {
        if roi.dims() != series.dims() {
            return Err(CdisError::ShapeMismatch(format!(
                "ROI mask dims {} do not match series dims {}",
                roi.dims(),
                series.dims()
            )));
        }
    }

    Ok(DelineationCase {
        id: entry.id.clone(),
        series,
        tumor,
        roi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::rvf::{write_mask, write_volume};
    use crate::volume::{Dims, Mask3D, Volume3D};
    use tempfile::tempdir;

    fn write_patient(dir: &Path, id: &str, label: Option<u8>) -> ManifestEntry {
        let d = Dims::new(3, 3, 2).unwrap();
        let pdir = dir.join(id);
        fs::create_dir_all(&pdir).unwrap();
        for (k, b) in [0.0f64, 800.0].iter().enumerate() {
            let data: Vec<f64> = (0..d.len()).map(|i| 1.0 + (i + k) as f64 / 10.0).collect();
            write_volume(
                &Volume3D::from_vec(d, data).unwrap(),
                &pdir.join(format!("b{}.rvf", *b as i64)),
            )
            .unwrap();
        }
        let mask_data: Vec<u8> = (0..d.len()).map(|i| (i % 3 == 0) as u8).collect();
        write_mask(
            &Mask3D::from_vec(d, mask_data).unwrap(),
            &pdir.join("tumor.rvf"),
        )
        .unwrap();
        ManifestEntry {
            id: id.into(),
            dwi: vec![
                DwiEntry {
                    b_value: 0.0,
                    path: PathBuf::from(format!("{id}/b0.rvf")),
                },
                DwiEntry {
                    b_value: 800.0,
                    path: PathBuf::from(format!("{id}/b800.rvf")),
                },
            ],
            tumor_mask: PathBuf::from(format!("{id}/tumor.rvf")),
            roi_mask: None,
            pcr_label: label,
        }
    }

    #[test]
    fn null_labels_are_kept_but_excluded_from_labeled_view() {
        let dir = tempdir().unwrap();
        let patients: Vec<ManifestEntry> = [
            ("a", Some(0)),
            ("b", Some(1)),
            ("c", Some(0)),
            ("d", None),
        ]
        .iter()
        .map(|(id, label)| write_patient(dir.path(), id, *label))
        .collect();
        let manifest_path = dir.path().join("manifest.json");
        write_manifest(&CohortManifest { patients }, &manifest_path).unwrap();

        let cohort = load_cohort(&manifest_path).unwrap();
        assert_eq!(cohort.len(), 4);
        assert_eq!(cohort.labeled().count(), 3);
        let counts = cohort.class_counts();
        assert_eq!((counts.class0, counts.class1, counts.unlabeled), (2, 1, 1));
        assert_eq!(counts.labeled() + counts.unlabeled, cohort.len());
    }

    #[test]
    fn paper_class_balance_reports_expected_proportions() {
        let counts = ClassCounts {
            class0: 171,
            class1: 82,
            unlabeled: 0,
        };
        let (p0, p1) = counts.proportions();
        assert_eq!(format!("{p0:.1}"), "67.6");
        assert_eq!(format!("{p1:.1}"), "32.4");
        assert_eq!(counts.labeled(), 253);
    }

    #[test]
    fn empty_and_duplicate_manifests_are_rejected() {
        assert!(matches!(
            CohortManifest { patients: vec![] }.validate(),
            Err(CdisError::EmptyCohort)
        ));

        let dir = tempdir().unwrap();
        let a = write_patient(dir.path(), "same", Some(0));
        let manifest = CohortManifest {
            patients: vec![a.clone(), a],
        };
        assert!(matches!(manifest.validate(), Err(CdisError::Parse(_))));
    }

    #[test]
    fn unresolvable_path_names_the_patient() {
        let dir = tempdir().unwrap();
        let mut entry = write_patient(dir.path(), "p", Some(1));
        entry.dwi[0].path = PathBuf::from("p/missing.rvf");
        let manifest_path = dir.path().join("manifest.json");
        write_manifest(
            &CohortManifest {
                patients: vec![entry],
            },
            &manifest_path,
        )
        .unwrap();
        match load_cohort(&manifest_path) {
            Err(CdisError::Patient { id, .. }) => assert_eq!(id, "p"),
            other => panic!("expected patient error, got {other:?}"),
        }
    }

    #[test]
    fn descending_b_values_are_rejected() {
        let dir = tempdir().unwrap();
        let mut entry = write_patient(dir.path(), "p", Some(1));
        entry.dwi.swap(0, 1);
        let manifest = CohortManifest {
            patients: vec![entry],
        };
        assert!(matches!(manifest.validate(), Err(CdisError::Parse(_))));
    }
}
