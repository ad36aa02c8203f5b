//! Rank-based delineation AUC (the optimizer's objective) and
//! classification metrics with LOOCV aggregation.
//!
//! AUC uses the Mann-Whitney statistic with midrank tie handling, which
//! makes it equal to the pairwise win probability
//! `P(score_pos > score_neg) + 0.5 * P(score_pos == score_neg)`.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cdis::{compute_cdis, CdisConfig};
use crate::diffusion::DwiSeries;
use crate::error::{CdisError, Result};
use crate::volume::{Mask3D, Volume3D};

/// One patient's delineation inputs. `roi` restricts the voxel population;
/// when absent the whole volume is the ROI.
#[derive(Debug, Clone)]
pub struct DelineationCase {
    pub id: String,
    pub series: DwiSeries,
    pub tumor: Mask3D,
    pub roi: Option<Mask3D>,
}

/// Controls for cohort AUC evaluation. Negative-voxel subsampling is a
/// deterministic, seeded cap for very large ROIs; the disabled default is
/// the authoritative mode.
#[derive(Debug, Clone, Copy)]
pub struct AucOptions {
    pub negative_cap: Option<usize>,
    pub seed: u64,
}

impl Default for AucOptions {
    fn default() -> Self {
        Self {
            negative_cap: None,
            seed: 0,
        }
    }
}

/// Mann-Whitney AUC with midrank ties. Result is in [0, 1].
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(CdisError::UndefinedAuc(format!(
            "need both score sets non-empty, got {} positives and {} negatives",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    if pos_scores
        .iter()
        .chain(neg_scores)
        .any(|s| !s.is_finite())
    {
        return Err(CdisError::InvalidParameter(
            "AUC scores must be finite".into(),
        ));
    }

    let mut all: Vec<(f64, bool)> = Vec::with_capacity(pos_scores.len() + neg_scores.len());
    all.extend(pos_scores.iter().map(|&s| (s, true)));
    all.extend(neg_scores.iter().map(|&s| (s, false)));
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));

    // Walk tie groups (exact equality); every member gets the group's
    // average 1-based rank.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += midrank * all[i..j].iter().filter(|(_, p)| *p).count() as f64;
        i = j;
    }

    let np = pos_scores.len() as f64;
    let nn = neg_scores.len() as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok((u / (np * nn)).clamp(0.0, 1.0))
}

/// ROC staircase as (FPR, TPR) points, one per distinct threshold, from
/// (0, 0) up to (1, 1). Thresholds sweep from +inf downward.
pub fn roc_points(pos_scores: &[f64], neg_scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(CdisError::UndefinedAuc(
            "ROC needs both score sets non-empty".into(),
        ));
    }
    let mut all: Vec<(f64, bool)> = Vec::with_capacity(pos_scores.len() + neg_scores.len());
    all.extend(pos_scores.iter().map(|&s| (s, true)));
    all.extend(neg_scores.iter().map(|&s| (s, false)));
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores are finite"));

    let (np, nn) = (pos_scores.len() as f64, neg_scores.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
        i = j;
    }
    Ok(points)
}

fn split_scores(
    score_vol: &Volume3D,
    tumor: &Mask3D,
    roi: Option<&Mask3D>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dims = score_vol.dims();
    if tumor.dims() != dims || roi.is_some_and(|r| r.dims() != dims) {
        return Err(CdisError::ShapeMismatch(format!(
            "score volume {} does not match mask dims",
            dims
        )));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..dims.len() {
        if roi.is_some_and(|r| r.data()[i] == 0) {
            continue;
        }
        if tumor.data()[i] == 1 {
            pos.push(score_vol.data()[i]);
        } else {
            neg.push(score_vol.data()[i]);
        }
    }
    Ok((pos, neg))
}

/// Delineation AUC of a score volume: tumor voxels inside the ROI against
/// non-tumor voxels inside the ROI.
pub fn voxel_auc(score_vol: &Volume3D, tumor: &Mask3D, roi: Option<&Mask3D>) -> Result<f64> {
    voxel_auc_with(score_vol, tumor, roi, &AucOptions::default())
}

pub fn voxel_auc_with(
    score_vol: &Volume3D,
    tumor: &Mask3D,
    roi: Option<&Mask3D>,
    opts: &AucOptions,
) -> Result<f64> {
    let (pos, mut neg) = split_scores(score_vol, tumor, roi)?;
    if let Some(cap) = opts.negative_cap {
        if neg.len() > cap && cap > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked: Vec<usize> = sample(&mut rng, neg.len(), cap).into_vec();
            picked.sort_unstable();
            neg = picked.into_iter().map(|i| neg[i]).collect();
        }
    }
    auc(&pos, &neg)
}

/// Compensated (Kahan) summation so cohort means are independent of how
/// patient work was scheduled.
fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Unweighted cohort mean of per-patient delineation AUC under one config.
/// Patients evaluate in parallel; results reduce in patient order.
pub fn cohort_mean_auc(cases: &[DelineationCase], config: &CdisConfig) -> Result<f64> {
    cohort_mean_auc_with(cases, config, &AucOptions::default())
}

pub fn cohort_mean_auc_with(
    cases: &[DelineationCase],
    config: &CdisConfig,
    opts: &AucOptions,
) -> Result<f64> {
    if cases.is_empty() {
        return Err(CdisError::EmptyCohort);
    }
    let per_patient: Vec<f64> = cases
        .par_iter()
        .map(|case| {
            let cdis = compute_cdis(&case.series, config)
                .map_err(|e| CdisError::for_patient(&case.id, e))?;
            voxel_auc_with(&cdis, &case.tumor, case.roi.as_ref(), opts)
                .map_err(|e| CdisError::for_patient(&case.id, e))
        })
        .collect::<Result<_>>()?;
    Ok(kahan_sum(&per_patient) / per_patient.len() as f64)
}

/// Binary confusion counts. At least one sample total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        if tp + fp + tn + fn_ == 0 {
            return Err(CdisError::InvalidParameter(
                "confusion counts must cover at least one sample".into(),
            ));
        }
        Ok(Self { tp, fp, tn, fn_ })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Classification metrics in [0, 1]. Ratios with a zero denominator are
/// reported as absent, never as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

pub fn classification_metrics(c: &ConfusionCounts) -> MetricsReport {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    MetricsReport {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Pools per-fold (predicted, actual) outcomes into one confusion matrix.
/// Pooling, not per-fold averaging: every LOOCV fold holds a single sample,
/// so per-fold metrics are degenerate.
pub fn pool_folds(folds: &[(u8, u8)]) -> Result<ConfusionCounts> {
    if folds.is_empty() {
        return Err(CdisError::InvalidParameter(
            "no LOOCV folds to aggregate".into(),
        ));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(predicted, actual) in folds {
        match (predicted, actual) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => {
                return Err(CdisError::InvalidParameter(format!(
                    "labels must be 0 or 1, got (predicted={predicted}, actual={actual})"
                )))
            }
        }
    }
    ConfusionCounts::new(tp, fp, tn, fn_)
}

pub fn loocv_aggregate(folds: &[(u8, u8)]) -> Result<MetricsReport> {
    Ok(classification_metrics(&pool_folds(folds)?))
}

/// Reads a `patient_id,predicted,actual` prediction file. Labels must be 0
/// or 1; errors carry the 1-based line number.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, u8, u8)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CdisError::io(format!("reading predictions {}", path.display()), e))?;
    parse_predictions(&text)
}

pub fn parse_predictions(text: &str) -> Result<Vec<(String, u8, u8)>> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| CdisError::Parse("empty predictions file".into()))?;
    let normalized: Vec<String> = header
        .1
        .split(',')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    if normalized != ["patient_id", "predicted", "actual"] {
        return Err(CdisError::Parse(format!(
            "line 1: expected header 'patient_id,predicted,actual', got '{}'",
            header.1
        )));
    }

    let parse_label = |field: &str, line: usize, what: &str| -> Result<u8> {
        match field.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(CdisError::Parse(format!(
                "line {line}: {what} label must be 0 or 1, got '{other}'"
            ))),
        }
    };

    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(CdisError::Parse(format!(
                "line {lineno}: expected 3 comma-separated fields, got {}",
                fields.len()
            )));
        }
        rows.push((
            fields[0].trim().to_string(),
            parse_label(fields[1], lineno, "predicted")?,
            parse_label(fields[2], lineno, "actual")?,
        ));
    }
    if rows.is_empty() {
        return Err(CdisError::Parse("predictions file has no data rows".into()));
    }
    Ok(rows)
}
