//! Activity-progress curves and their monotonicity / completion metrics.
//!
//! The progress value at a frame is the share of object area still in the
//! actionable state: `|act| / |act ∪ trf|`. It starts near 1 and should fall
//! to 0 and stay there once the change is complete.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::metrics::CompositeFrame;
use crate::model::{ClipRecord, FramePhase};

/// Ties in the pair count are non-increasing, so a constant curve scores -1.
pub const TAU_TIE_CONVENTION: &str = "ties-count-non-increasing";
pub const END_L2_CONVENTION: &str = "rms";

#[derive(Clone, Debug, PartialEq)]
pub struct ProgressCurve {
    /// `None` where neither state has any area.
    pub values: Vec<Option<f64>>,
    pub phases: Vec<FramePhase>,
}

impl ProgressCurve {
    pub fn from_values(values: &[f64], phases: Vec<FramePhase>) -> Self {
        ProgressCurve {
            values: values.iter().copied().map(Some).collect(),
            phases,
        }
    }

    pub fn present(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ProgressMetrics {
    pub tau: Option<f64>,
    pub end_sigma: Option<f64>,
    pub end_l2: Option<f64>,
}

pub fn progress_value(act_area: u64, union_area: u64) -> Option<f64> {
    (union_area > 0).then(|| act_area as f64 / union_area as f64)
}

pub fn progress_curve(clip: &ClipRecord, frames: &[CompositeFrame]) -> Result<ProgressCurve> {
    let values = (0..clip.frame_count as usize)
        .map(|t| match frames.get(t) {
            Some(f) => Ok(progress_value(f.act.area(), f.act.union_area(&f.trf)?)),
            None => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProgressCurve {
        values,
        phases: clip.frame_phases.clone(),
    })
}

/// Counts pairs `i < j` with `values[j] > values[i]` by merge sort.
fn increasing_pairs(values: &mut [f64], scratch: &mut Vec<f64>) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = increasing_pairs(&mut values[..mid], scratch) + increasing_pairs(&mut values[mid..], scratch);
    // both halves are sorted ascending; for each right element count left elements strictly below it
    let (left, right) = values.split_at(mid);
    let mut i = 0;
    for &r in right {
        while i < left.len() && left[i].total_cmp(&r) == Ordering::Less {
            i += 1;
        }
        count += i as u64;
    }
    scratch.clear();
    let (mut a, mut b) = (0, 0);
    while a < left.len() && b < right.len() {
        if left[a].total_cmp(&right[b]) != Ordering::Greater {
            scratch.push(left[a]);
            a += 1;
        } else {
            scratch.push(right[b]);
            b += 1;
        }
    }
    scratch.extend_from_slice(&left[a..]);
    scratch.extend_from_slice(&right[b..]);
    values.copy_from_slice(scratch);
    count
}

/// Monotonicity index `(increasing - non_increasing) / pairs` over present values.
/// Returns `None` with fewer than two present values.
pub fn kendall_tau(curve: &ProgressCurve) -> Option<f64> {
    let mut values = curve.present();
    let n = values.len() as u64;
    if n < 2 {
        return None;
    }
    let total = n * (n - 1) / 2;
    let inc = increasing_pairs(&mut values, &mut Vec::with_capacity(n as usize));
    Some((inc as f64 - (total - inc) as f64) / total as f64)
}

/// Population variance and root-mean-square over present end-phase values.
pub fn end_state_metrics(curve: &ProgressCurve) -> Option<(f64, f64)> {
    let end: Vec<f64> = curve
        .values
        .iter()
        .zip(&curve.phases)
        .filter_map(|(v, &p)| (p == FramePhase::End).then_some(*v).flatten())
        .collect();
    if end.is_empty() {
        return None;
    }
    let n = end.len() as f64;
    let mean = end.iter().sum::<f64>() / n;
    let var = end.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let rms = (end.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    Some((var, rms))
}

pub fn curve_metrics(curve: &ProgressCurve) -> ProgressMetrics {
    let end = end_state_metrics(curve);
    ProgressMetrics {
        tau: kendall_tau(curve),
        end_sigma: end.map(|e| e.0),
        end_l2: end.map(|e| e.1),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgressReport {
    pub curves: BTreeMap<String, ProgressCurve>,
    pub per_clip: BTreeMap<String, ProgressMetrics>,
    /// Each field is the unweighted mean over clips where it is defined.
    pub aggregate: ProgressMetrics,
    /// Clips with at least one undefined metric.
    pub undefined: Vec<String>,
}

/// Curves and metrics for every clip that has a prediction.
pub fn progress_report(
    clips: &[ClipRecord],
    predictions: &BTreeMap<String, Vec<CompositeFrame>>,
) -> Result<ProgressReport> {
    let rows = clips
        .par_iter()
        .filter_map(|c| predictions.get(&c.clip_id).map(|p| (c, p)))
        .map(|(c, p)| {
            let curve = progress_curve(c, p)?;
            let metrics = curve_metrics(&curve);
            Ok((c.clip_id.clone(), curve, metrics))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ProgressReport {
        curves: BTreeMap::new(),
        per_clip: BTreeMap::new(),
        aggregate: ProgressMetrics::default(),
        undefined: Vec::new(),
    };
    for (id, curve, metrics) in rows {
        report.curves.insert(id.clone(), curve);
        report.per_clip.insert(id, metrics);
    }
    let field_mean = |f: fn(&ProgressMetrics) -> Option<f64>| {
        let v: Vec<f64> = report.per_clip.values().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    report.aggregate = ProgressMetrics {
        tau: field_mean(|m| m.tau),
        end_sigma: field_mean(|m| m.end_sigma),
        end_l2: field_mean(|m| m.end_l2),
    };
    report.undefined = report
        .per_clip
        .iter()
        .filter(|(_, m)| m.tau.is_none() || m.end_sigma.is_none())
        .map(|(id, _)| id.clone())
        .collect();
    Ok(report)
}
