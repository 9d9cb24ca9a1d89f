//! State-change dynamics constraints over a masklet's label sequence.
//!
//! Two passes run per masklet:
//!
//! 1. **Causal ordering.** While the last actionable index follows the first
//!    transformed index, the boundary label lying farther from its own class
//!    midpoint is flipped to the other class. Midpoints are recomputed after
//!    every flip. On equal distances the first transformed index is flipped.
//! 2. **Ambiguity resolution.** Each ambiguous index joins whichever class
//!    boundary is strictly closer (actionable) or not (transformed). With only
//!    one class present it joins that class; with neither it stays ambiguous.
//!
//! Background labels are never touched.

use std::ops::AddAssign;

use rayon::prelude::*;
use serde::Serialize;

use crate::model::{ClipLabels, FrameIndex, LabelSequence, StateLabel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RefinementReport {
    pub flips_causal: u64,
    pub resolved_ambiguous: u64,
    pub iterations: u64,
}

impl AddAssign for RefinementReport {
    fn add_assign(&mut self, rhs: Self) {
        self.flips_causal += rhs.flips_causal;
        self.resolved_ambiguous += rhs.resolved_ambiguous;
        self.iterations += rhs.iterations;
    }
}

fn midpoint(set: &[FrameIndex]) -> f64 {
    set.iter().map(|&t| t as f64).sum::<f64>() / set.len() as f64
}

pub fn causal_ordering(seq: &LabelSequence) -> (LabelSequence, RefinementReport) {
    let mut act = seq.index_set(StateLabel::Actionable);
    let mut trf = seq.index_set(StateLabel::Transformed);
    let mut report = RefinementReport::default();
    let mut out = seq.clone();

    while let (Some(&last_act), Some(&first_trf)) = (act.last(), trf.first()) {
        if last_act < first_trf {
            break;
        }
        report.iterations += 1;
        let dist_act = (last_act as f64 - midpoint(&act)).abs();
        let dist_trf = (first_trf as f64 - midpoint(&trf)).abs();
        if dist_act > dist_trf {
            act.pop();
            let pos = trf.partition_point(|&t| t < last_act);
            trf.insert(pos, last_act);
            out.labels.insert(last_act, StateLabel::Transformed);
        } else {
            trf.remove(0);
            let pos = act.partition_point(|&t| t < first_trf);
            act.insert(pos, first_trf);
            out.labels.insert(first_trf, StateLabel::Actionable);
        }
        report.flips_causal += 1;
    }
    (out, report)
}

pub fn ambiguity_resolution(seq: &LabelSequence) -> (LabelSequence, RefinementReport) {
    let last_act = seq.index_set(StateLabel::Actionable).last().copied();
    let first_trf = seq.index_set(StateLabel::Transformed).first().copied();
    let mut report = RefinementReport::default();
    let mut out = seq.clone();

    for (&t, label) in out.labels.iter_mut() {
        if *label != StateLabel::Ambiguous {
            continue;
        }
        let resolved = match (last_act, first_trf) {
            (Some(a), Some(f)) => {
                if t.abs_diff(a) < t.abs_diff(f) {
                    StateLabel::Actionable
                } else {
                    StateLabel::Transformed
                }
            }
            (Some(_), None) => StateLabel::Actionable,
            (None, Some(_)) => StateLabel::Transformed,
            (None, None) => continue,
        };
        *label = resolved;
        report.resolved_ambiguous += 1;
    }
    (out, report)
}

/// Causal ordering followed by ambiguity resolution.
pub fn refine_sequence(seq: &LabelSequence) -> (LabelSequence, RefinementReport) {
    let (ordered, mut report) = causal_ordering(seq);
    let (resolved, amb) = ambiguity_resolution(&ordered);
    report += amb;
    (resolved, report)
}

pub fn refine_clip(labels: &ClipLabels) -> (ClipLabels, RefinementReport) {
    let refined: Vec<_> = labels.par_iter().map(|(&id, seq)| (id, refine_sequence(seq))).collect();
    let mut total = RefinementReport::default();
    let map = refined
        .into_iter()
        .map(|(id, (seq, report))| {
            total += report;
            (id, seq)
        })
        .collect();
    (map, total)
}
