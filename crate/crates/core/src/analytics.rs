//! Ground-truth dataset statistics: phase durations, region areas and
//! area progression over normalized clip time.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::ClipRecord;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PhaseDurations {
    pub act: u32,
    pub trf: u32,
    pub overlap: u32,
}

/// Frames where each class's ground-truth mask is nonempty, and where both are.
pub fn phase_durations(clip: &ClipRecord) -> PhaseDurations {
    let mut d = PhaseDurations::default();
    for g in clip.ground_truth.iter().flatten() {
        let (a, t) = (!g.actionable.is_empty(), !g.transformed.is_empty());
        d.act += a as u32;
        d.trf += t as u32;
        d.overlap += (a && t) as u32;
    }
    d
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: u64,
}

impl MeanStd {
    /// Population statistics; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
            count: values.len() as u64,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AreaStats {
    pub act: Option<MeanStd>,
    pub trf: Option<MeanStd>,
}

/// Per-verb area statistics over frames where the class is present.
pub fn area_stats(clips: &[ClipRecord]) -> BTreeMap<String, AreaStats> {
    let mut samples: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for clip in clips {
        let Some(gt) = &clip.ground_truth else { continue };
        let entry = samples.entry(clip.osc.verb.as_str()).or_default();
        for g in gt {
            if !g.actionable.is_empty() {
                entry.0.push(g.actionable.area() as f64);
            }
            if !g.transformed.is_empty() {
                entry.1.push(g.transformed.area() as f64);
            }
        }
    }
    samples
        .into_iter()
        .map(|(verb, (a, t))| {
            (
                verb.to_string(),
                AreaStats {
                    act: MeanStd::of(&a),
                    trf: MeanStd::of(&t),
                },
            )
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ProfileBin {
    pub act: Option<MeanStd>,
    pub trf: Option<MeanStd>,
}

/// Normalized-time bin of frame `t` in a clip of `frames` frames.
pub fn time_bin(t: u32, frames: u32, bins: usize) -> usize {
    ((bins as u64 * t as u64 / frames.max(1) as u64) as usize).min(bins.saturating_sub(1))
}

/// Per-bin mean actionable and transformed area of one clip.
type ClipBins = (Vec<f64>, Vec<f64>);

/// Per verb, the across-clip mean and spread of each clip's average area in
/// every normalized-time bin. Absent classes count as zero area here.
pub fn progression_profile(clips: &[ClipRecord], bins: usize) -> BTreeMap<String, Vec<ProfileBin>> {
    let bins = bins.max(1);
    let mut per_verb: BTreeMap<&str, Vec<ClipBins>> = BTreeMap::new();
    for clip in clips {
        let Some(gt) = &clip.ground_truth else { continue };
        let mut sums = vec![(0.0, 0.0, 0u32); bins];
        for g in gt {
            let b = time_bin(g.frame_index, clip.frame_count, bins);
            sums[b].0 += g.actionable.area() as f64;
            sums[b].1 += g.transformed.area() as f64;
            sums[b].2 += 1;
        }
        let slots = per_verb
            .entry(clip.osc.verb.as_str())
            .or_insert_with(|| vec![(Vec::new(), Vec::new()); bins]);
        for (slot, (a, t, n)) in slots.iter_mut().zip(sums) {
            if n > 0 {
                slot.0.push(a / n as f64);
                slot.1.push(t / n as f64);
            }
        }
    }
    per_verb
        .into_iter()
        .map(|(verb, slots)| {
            let profile = slots
                .iter()
                .map(|(a, t)| ProfileBin {
                    act: MeanStd::of(a),
                    trf: MeanStd::of(t),
                })
                .collect();
            (verb.to_string(), profile)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PixelMask;
    use crate::model::*;

    fn clip_with(frames: u32, gt: Vec<(u64, u64)>) -> ClipRecord {
        let w = 64;
        let mask = |n: u64| PixelMask::rect(2, w, 0, 0, 1, n as u32).unwrap();
        let mask_b = |n: u64| PixelMask::rect(2, w, 1, 0, 1, n as u32).unwrap();
        ClipRecord {
            clip_id: "c".into(),
            osc: OscDescriptor {
                verb: "chop".into(),
                noun: "onion".into(),
                prompt_act: "whole onion".into(),
                prompt_trf: "chopped onion".into(),
            },
            frame_count: frames,
            fps: 1.0,
            frame_phases: vec![FramePhase::Unlabeled; frames as usize],
            masklets: vec![],
            split_tag: SplitTag::Seen,
            text_embeddings: None,
            detection_interval: None,
            ground_truth: Some(
                gt.into_iter()
                    .enumerate()
                    .map(|(i, (a, t))| GroundTruthFrame::new(i as u32, mask(a), mask_b(t), false).unwrap())
                    .collect(),
            ),
        }
    }

    #[test]
    fn durations() {
        let gt: Vec<_> = (0..10)
            .map(|t| (if t <= 5 { 4 } else { 0 }, if t >= 3 { 4 } else { 0 }))
            .collect();
        assert_eq!(
            phase_durations(&clip_with(10, gt)),
            PhaseDurations {
                act: 6,
                trf: 7,
                overlap: 3
            }
        );
        let gt: Vec<_> = (0..4).map(|_| (3, 0)).collect();
        assert_eq!(
            phase_durations(&clip_with(4, gt)),
            PhaseDurations {
                act: 4,
                trf: 0,
                overlap: 0
            }
        );
        let mut empty = clip_with(1, vec![]);
        empty.ground_truth = None;
        assert_eq!(phase_durations(&empty), PhaseDurations::default());
    }

    #[test]
    fn areas() {
        let s = area_stats(&[clip_with(1, vec![(10, 0)])]);
        assert_eq!(
            s["chop"].act,
            Some(MeanStd {
                mean: 10.0,
                std: 0.0,
                count: 1
            })
        );
        assert_eq!(s["chop"].trf, None);
        let s = area_stats(&[clip_with(2, vec![(10, 0), (30, 0)])]);
        assert_eq!(
            s["chop"].act,
            Some(MeanStd {
                mean: 20.0,
                std: 10.0,
                count: 2
            })
        );
        assert!(area_stats(&[]).is_empty());
    }

    #[test]
    fn profile_bins() {
        let series = vec![(8, 0), (6, 2), (4, 4), (2, 6), (0, 8)];
        let c = clip_with(5, series.clone());
        let raw = &progression_profile(std::slice::from_ref(&c), 5)["chop"];
        for (bin, (a, t)) in raw.iter().zip(&series) {
            assert_eq!(bin.act.unwrap().mean, *a as f64);
            assert_eq!(bin.trf.unwrap().mean, *t as f64);
        }
        let one = &progression_profile(&[c], 1)["chop"];
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].act.unwrap().mean, 4.0);
        assert_eq!(one[0].trf.unwrap().mean, 4.0);
    }

    #[test]
    fn bin_assignment() {
        assert_eq!(time_bin(0, 10, 4), 0);
        assert_eq!(time_bin(9, 10, 4), 3);
        assert_eq!(time_bin(5, 10, 4), 2);
        assert_eq!(time_bin(3, 3, 4), 3);
    }
}
