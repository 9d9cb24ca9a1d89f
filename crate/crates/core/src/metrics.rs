//! Segmentation evaluation: per-class Jaccard, clip and dataset mIoU.
//!
//! Conventions:
//! - A frame where both the prediction and the ground truth of a class are
//!   empty has no IoU for that class and is left out of that class's mean.
//! - Frame IoUs are pooled per class over all evaluated frames (of a verb, for
//!   the per-verb breakdown); mIoU is the mean of the two class means.
//! - Ignored frames are counted but never scored.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::labeling::region_scores;
use crate::mask::PixelMask;
use crate::model::{ClipLabels, ClipRecord, CorpusLabels, FramePhase, LabelSequence, SplitTag, StateLabel};

pub const UNDEFINED_IOU_CONVENTION: &str = "excluded";
pub const POOLING_CONVENTION: &str = "frames-pooled-per-verb";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitFilter {
    #[default]
    Full,
    Transition,
    Seen,
    Novel,
}

impl std::str::FromStr for SplitFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SplitFilter::Full),
            "transition" => Ok(SplitFilter::Transition),
            "seen" => Ok(SplitFilter::Seen),
            "novel" => Ok(SplitFilter::Novel),
            other => Err(Error::invalid("split filter", other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EvalConfig {
    pub split: SplitFilter,
    /// Score a single state-agnostic object mask instead of the two classes.
    pub fuse_states: bool,
}

/// Rasterized per-frame prediction for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeFrame {
    pub act: PixelMask,
    pub trf: PixelMask,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ClassScores {
    pub miou: Option<f64>,
    pub miou_act: Option<f64>,
    pub miou_trf: Option<f64>,
    pub frames_evaluated: u64,
    pub frames_ignored: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalResult {
    pub miou: Option<f64>,
    pub miou_act: Option<f64>,
    pub miou_trf: Option<f64>,
    pub frames_evaluated: u64,
    pub frames_ignored: u64,
    pub per_verb: BTreeMap<String, ClassScores>,
    /// Unweighted mean of the defined per-verb mIoUs.
    pub verb_mean: Option<f64>,
    pub fused: bool,
}

pub fn frame_iou(pred: &PixelMask, gt: &PixelMask) -> Result<Option<f64>> {
    let inter = pred.intersection_area(gt)?;
    let union = pred.union_area(gt)?;
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

fn claim_margin(label: StateLabel, clip: &ClipRecord, region: &crate::model::MaskRegion) -> f64 {
    let scores = region_scores(region, clip.text_embeddings.as_ref()).and_then(|r| r.ok());
    match (label, scores) {
        (StateLabel::Actionable, Some(s)) => s.s_act - s.s_trf,
        (StateLabel::Transformed, Some(s)) => s.s_trf - s.s_act,
        _ => 0.0,
    }
}

/// Rasterizes labeled masklets into per-frame class masks.
///
/// Pixels claimed by both classes go to the class whose claiming region has
/// the larger winning margin (`s_act - s_trf` for actionable claims, the
/// reverse for transformed); ties go to transformed. Ambiguous and background
/// regions contribute nothing.
pub fn composite_prediction(clip: &ClipRecord, labels: &ClipLabels) -> Result<Vec<CompositeFrame>> {
    let Some((h, w)) = clip.grid() else {
        return Ok(Vec::new());
    };
    let empty = PixelMask::empty(h, w)?;
    let mut claims: Vec<Vec<(StateLabel, &PixelMask, f64)>> = vec![Vec::new(); clip.frame_count as usize];
    for masklet in &clip.masklets {
        let Some(seq) = labels.get(&masklet.track_id) else {
            continue;
        };
        for region in masklet.regions() {
            let label = seq.labels.get(&region.frame_index).copied();
            if let Some(l @ (StateLabel::Actionable | StateLabel::Transformed)) = label {
                claims[region.frame_index as usize].push((l, &region.mask, claim_margin(l, clip, region)));
            }
        }
    }

    claims
        .iter()
        .map(|frame_claims| {
            let union_of = |class| {
                frame_claims
                    .iter()
                    .filter(|c| c.0 == class)
                    .try_fold(empty.clone(), |acc, c| acc.union(c.1))
            };
            let act = union_of(StateLabel::Actionable)?;
            let trf = union_of(StateLabel::Transformed)?;
            if act.intersection_area(&trf)? == 0 {
                return Ok(CompositeFrame { act, trf });
            }
            resolve_overlap(h, w, frame_claims)
        })
        .collect()
}

fn resolve_overlap(h: u32, w: u32, claims: &[(StateLabel, &PixelMask, f64)]) -> Result<CompositeFrame> {
    let n = h as usize * w as usize;
    let mut best_act = vec![f64::NEG_INFINITY; n];
    let mut best_trf = vec![f64::NEG_INFINITY; n];
    for &(label, mask, margin) in claims {
        let best = if label == StateLabel::Actionable {
            &mut best_act
        } else {
            &mut best_trf
        };
        for (slot, bit) in best.iter_mut().zip(mask.decode()) {
            if bit == 1 && margin > *slot {
                *slot = margin;
            }
        }
    }
    let mut act = vec![0u8; n];
    let mut trf = vec![0u8; n];
    for i in 0..n {
        let (a, t) = (best_act[i], best_trf[i]);
        if t > f64::NEG_INFINITY && t >= a {
            trf[i] = 1;
        } else if a > f64::NEG_INFINITY {
            act[i] = 1;
        }
    }
    Ok(CompositeFrame {
        act: PixelMask::encode(h, w, &act)?,
        trf: PixelMask::encode(h, w, &trf)?,
    })
}

pub fn composite_corpus(clips: &[ClipRecord], labels: &CorpusLabels) -> Result<BTreeMap<String, Vec<CompositeFrame>>> {
    let out = clips
        .par_iter()
        .filter_map(|c| labels.get(&c.clip_id).map(|l| (c, l)))
        .map(|(c, l)| Ok((c.clip_id.clone(), composite_prediction(c, l)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(out.into_iter().collect())
}

#[derive(Default)]
struct FrameScores {
    act: Vec<f64>,
    trf: Vec<f64>,
    fused: Vec<f64>,
    evaluated: u64,
    ignored: u64,
}

impl FrameScores {
    fn extend(&mut self, other: &FrameScores) {
        self.act.extend_from_slice(&other.act);
        self.trf.extend_from_slice(&other.trf);
        self.fused.extend_from_slice(&other.fused);
        self.evaluated += other.evaluated;
        self.ignored += other.ignored;
    }

    fn summarize(&self, fused: bool) -> ClassScores {
        let (miou, miou_act, miou_trf) = if fused {
            (mean(&self.fused), None, None)
        } else {
            let (a, t) = (mean(&self.act), mean(&self.trf));
            let m = match (a, t) {
                (Some(a), Some(t)) => Some((a + t) / 2.0),
                (a, t) => a.or(t),
            };
            (m, a, t)
        };
        ClassScores {
            miou,
            miou_act,
            miou_trf,
            frames_evaluated: self.evaluated,
            frames_ignored: self.ignored,
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn clip_in_split(clip: &ClipRecord, split: SplitFilter) -> bool {
    match split {
        SplitFilter::Full | SplitFilter::Transition => true,
        SplitFilter::Seen => clip.split_tag == SplitTag::Seen,
        SplitFilter::Novel => clip.split_tag == SplitTag::Novel,
    }
}

fn score_clip(clip: &ClipRecord, pred: &[CompositeFrame], cfg: &EvalConfig) -> Result<FrameScores> {
    let mut scores = FrameScores::default();
    let gt = clip.ground_truth.as_deref().unwrap_or_default();
    if cfg.split == SplitFilter::Transition && clip.frame_phases.iter().all(|&p| p == FramePhase::Unlabeled) {
        return Err(Error::invalid(
            "eval config",
            format!("transition split needs frame phases, clip {} has none", clip.clip_id),
        ));
    }
    for g in gt {
        if cfg.split == SplitFilter::Transition && clip.frame_phases[g.frame_index as usize] != FramePhase::Transition {
            continue;
        }
        if g.ignored {
            scores.ignored += 1;
            continue;
        }
        scores.evaluated += 1;
        let empty;
        let (p_act, p_trf) = match pred.get(g.frame_index as usize) {
            Some(p) => (&p.act, &p.trf),
            None => {
                empty = PixelMask::empty(g.actionable.height(), g.actionable.width())?;
                (&empty, &empty)
            }
        };
        if cfg.fuse_states {
            let p = p_act.union(p_trf)?;
            let t = g.actionable.union(&g.transformed)?;
            scores.fused.extend(frame_iou(&p, &t)?);
        } else {
            scores.act.extend(frame_iou(p_act, &g.actionable)?);
            scores.trf.extend(frame_iou(p_trf, &g.transformed)?);
        }
    }
    Ok(scores)
}

/// Scores predictions against every annotated clip that passes the split filter.
pub fn evaluate(
    clips: &[ClipRecord],
    predictions: &BTreeMap<String, Vec<CompositeFrame>>,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    let mut selected: Vec<&ClipRecord> = clips
        .iter()
        .filter(|c| c.ground_truth.is_some() && clip_in_split(c, cfg.split))
        .collect();
    selected.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));

    let missing: Vec<String> = selected
        .iter()
        .filter(|c| !predictions.contains_key(&c.clip_id))
        .map(|c| c.clip_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }

    let per_clip = selected
        .par_iter()
        .map(|c| score_clip(c, &predictions[&c.clip_id], cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut all = FrameScores::default();
    let mut by_verb: BTreeMap<&str, FrameScores> = BTreeMap::new();
    for (clip, scores) in selected.iter().zip(&per_clip) {
        all.extend(scores);
        by_verb.entry(clip.osc.verb.as_str()).or_default().extend(scores);
    }
    let overall = all.summarize(cfg.fuse_states);
    let per_verb: BTreeMap<String, ClassScores> = by_verb
        .into_iter()
        .map(|(v, s)| (v.to_string(), s.summarize(cfg.fuse_states)))
        .collect();
    let verb_mious: Vec<f64> = per_verb.values().filter_map(|s| s.miou).collect();

    Ok(EvalResult {
        miou: overall.miou,
        miou_act: overall.miou_act,
        miou_trf: overall.miou_trf,
        frames_evaluated: overall.frames_evaluated,
        frames_ignored: overall.frames_ignored,
        per_verb,
        verb_mean: mean(&verb_mious),
        fused: cfg.fuse_states,
    })
}

pub const ORACLE_OVERLAP: f64 = 0.5;

/// Upper-bound labels: each region takes the ground-truth class it overlaps
/// most, provided that overlap fraction of the region exceeds `theta`.
pub fn oracle_labels(clip: &ClipRecord, theta: f64) -> Result<ClipLabels> {
    let mut out = ClipLabels::new();
    for masklet in &clip.masklets {
        let mut seq = LabelSequence::new(masklet.track_id);
        for region in masklet.regions() {
            let label = match clip.gt_frame(region.frame_index) {
                Some(g) => {
                    let area = region.mask.area() as f64;
                    let f_act = region.mask.intersection_area(&g.actionable)? as f64 / area;
                    let f_trf = region.mask.intersection_area(&g.transformed)? as f64 / area;
                    if f_act > theta && f_act > f_trf {
                        StateLabel::Actionable
                    } else if f_trf > theta && f_trf > f_act {
                        StateLabel::Transformed
                    } else {
                        StateLabel::Background
                    }
                }
                None => StateLabel::Background,
            };
            seq.labels.insert(region.frame_index, label);
        }
        out.insert(masklet.track_id, seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn osc() -> OscDescriptor {
        OscDescriptor {
            verb: "chop".into(),
            noun: "avocado".into(),
            prompt_act: "whole avocado".into(),
            prompt_trf: "chopped avocado".into(),
        }
    }

    fn clip(masklets: Vec<Masklet>, gt: Option<Vec<GroundTruthFrame>>, frames: u32) -> ClipRecord {
        ClipRecord {
            clip_id: "c0".into(),
            osc: osc(),
            frame_count: frames,
            fps: 1.0,
            frame_phases: vec![FramePhase::Unlabeled; frames as usize],
            masklets,
            split_tag: SplitTag::Seen,
            text_embeddings: None,
            detection_interval: None,
            ground_truth: gt,
        }
    }

    fn rect(t: u32, l: u32, r: u32, c: u32) -> PixelMask {
        PixelMask::rect(4, 4, t, l, r, c).unwrap()
    }

    fn region(mask: PixelMask, a: f64, t: f64) -> MaskRegion {
        MaskRegion::new(0, mask, Some(SimilarityPair::new(a, t).unwrap())).unwrap()
    }

    fn labels(pairs: &[(TrackId, StateLabel)]) -> ClipLabels {
        pairs
            .iter()
            .map(|&(id, l)| (id, LabelSequence::from_slice(id, &[l])))
            .collect()
    }

    #[test]
    fn iou_fixtures() {
        let a = rect(0, 0, 2, 2);
        assert_eq!(frame_iou(&a, &a).unwrap(), Some(1.0));
        assert_eq!(frame_iou(&a, &rect(2, 2, 2, 2)).unwrap(), Some(0.0));
        assert_eq!(frame_iou(&a, &rect(0, 1, 2, 2)).unwrap(), Some(1.0 / 3.0));
        let e = PixelMask::empty(4, 4).unwrap();
        assert_eq!(frame_iou(&e, &e).unwrap(), None);
        assert_eq!(frame_iou(&a, &e).unwrap(), Some(0.0));
        assert!(frame_iou(&a, &PixelMask::empty(3, 4).unwrap()).is_err());
    }

    #[test]
    fn composite_single_and_disjoint() {
        let m0 = Masklet::new(0, vec![region(rect(0, 0, 2, 2), 0.4, 0.2)]).unwrap();
        let m1 = Masklet::new(1, vec![region(rect(2, 2, 2, 2), 0.2, 0.4)]).unwrap();
        let c = clip(vec![m0.clone()], None, 1);
        let out = composite_prediction(&c, &labels(&[(0, StateLabel::Actionable)])).unwrap();
        assert_eq!(out[0].act, rect(0, 0, 2, 2));
        assert!(out[0].trf.is_empty());

        let c = clip(vec![m0, m1], None, 1);
        let out = composite_prediction(
            &c,
            &labels(&[(0, StateLabel::Actionable), (1, StateLabel::Transformed)]),
        )
        .unwrap();
        assert_eq!(out[0].act, rect(0, 0, 2, 2));
        assert_eq!(out[0].trf, rect(2, 2, 2, 2));

        let out =
            composite_prediction(&c, &labels(&[(0, StateLabel::Ambiguous), (1, StateLabel::Background)])).unwrap();
        assert!(out[0].act.is_empty() && out[0].trf.is_empty());
    }

    #[test]
    fn composite_overlap_goes_to_larger_margin() {
        // act region: rows 0-1, cols 0-2 (6 px); trf region: row 1, cols 0-2 plus row 2 (shares 3 px)
        let act = rect(0, 0, 2, 3);
        let trf = rect(1, 0, 2, 3);
        let m0 = Masklet::new(0, vec![region(act.clone(), 0.35, 0.30)]).unwrap();
        let m1 = Masklet::new(1, vec![region(trf.clone(), 0.20, 0.40)]).unwrap();
        let c = clip(vec![m0, m1], None, 1);
        let l = labels(&[(0, StateLabel::Actionable), (1, StateLabel::Transformed)]);
        let out = composite_prediction(&c, &l).unwrap();

        // pixel oracle: shared pixels are transformed (margin 0.20 > 0.05)
        let (a, t) = (act.decode(), trf.decode());
        let want_trf: Vec<u8> = t.clone();
        let want_act: Vec<u8> = a.iter().zip(&t).map(|(&x, &y)| x & (1 - y)).collect();
        assert_eq!(out[0].act.decode(), want_act);
        assert_eq!(out[0].trf.decode(), want_trf);
        assert_eq!(out[0].act.intersection_area(&out[0].trf).unwrap(), 0);
        assert_eq!(act.intersection_area(&trf).unwrap(), 3);

        // reversed margins hand the shared pixels to actionable
        let m0 = Masklet::new(0, vec![region(act.clone(), 0.60, 0.10)]).unwrap();
        let m1 = Masklet::new(1, vec![region(trf.clone(), 0.30, 0.40)]).unwrap();
        let out = composite_prediction(&clip(vec![m0, m1], None, 1), &l).unwrap();
        assert_eq!(out[0].act, act);
        assert_eq!(out[0].trf.area(), 3);
    }

    #[test]
    fn composite_overlap_tie_goes_to_transformed() {
        let m0 = Masklet::new(0, vec![region(rect(0, 0, 2, 2), 0.4, 0.3)]).unwrap();
        let m1 = Masklet::new(1, vec![region(rect(0, 0, 2, 2), 0.3, 0.4)]).unwrap();
        let l = labels(&[(0, StateLabel::Actionable), (1, StateLabel::Transformed)]);
        let out = composite_prediction(&clip(vec![m0, m1], None, 1), &l).unwrap();
        assert!(out[0].act.is_empty());
        assert_eq!(out[0].trf.area(), 4);
    }

    fn gt(frame: u32, act: PixelMask, trf: PixelMask, ignored: bool) -> GroundTruthFrame {
        GroundTruthFrame::new(frame, act, trf, ignored).unwrap()
    }

    #[test]
    fn two_frame_arithmetic() {
        // frame 0: act IoU 1.0, trf IoU 0.6; frame 1: act IoU 0.2, trf IoU 0.6
        let w = 10;
        let row = |cols: u32| PixelMask::rect(2, w, 0, 0, 1, cols).unwrap();
        let row2 = |left: u32, cols: u32| PixelMask::rect(2, w, 1, left, 1, cols).unwrap();
        let gts = vec![gt(0, row(5), row2(0, 5), false), gt(1, row(5), row2(0, 5), false)];
        let preds = vec![
            CompositeFrame {
                act: row(5),
                trf: row2(0, 3),
            },
            CompositeFrame {
                act: row(1),
                trf: row2(0, 3),
            },
        ];
        let mut c = clip(vec![], Some(gts), 2);
        c.frame_phases = vec![FramePhase::Initial, FramePhase::Transition];
        let result = evaluate(
            &[c],
            &BTreeMap::from([("c0".to_string(), preds)]),
            &EvalConfig::default(),
        )
        .unwrap();
        assert!((result.miou_act.unwrap() - 0.6).abs() < 1e-12);
        assert!((result.miou_trf.unwrap() - 0.6).abs() < 1e-12);
        assert!((result.miou.unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(result.frames_evaluated, 2);
    }

    #[test]
    fn ignored_and_missing() {
        let gts = vec![gt(0, rect(0, 0, 1, 1), rect(3, 3, 1, 1), true)];
        let c = clip(vec![], Some(gts), 1);
        let preds = BTreeMap::from([("c0".to_string(), vec![])]);
        let r = evaluate(std::slice::from_ref(&c), &preds, &EvalConfig::default()).unwrap();
        assert_eq!(r.frames_evaluated, 0);
        assert_eq!(r.frames_ignored, 1);
        assert_eq!(r.miou, None);

        let err = evaluate(&[c], &BTreeMap::new(), &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingPredictions(ref ids) if ids == &["c0"]));
    }

    #[test]
    fn fused_mode_scores_union() {
        let gts = vec![gt(0, rect(0, 0, 2, 2), rect(2, 0, 2, 2), false)];
        let c = clip(vec![], Some(gts), 1);
        // prediction swaps the classes: per-class 0, fused 1
        let preds = BTreeMap::from([(
            "c0".to_string(),
            vec![CompositeFrame {
                act: rect(2, 0, 2, 2),
                trf: rect(0, 0, 2, 2),
            }],
        )]);
        let split = evaluate(std::slice::from_ref(&c), &preds, &EvalConfig::default()).unwrap();
        assert_eq!(split.miou, Some(0.0));
        let fused = evaluate(
            &[c],
            &preds,
            &EvalConfig {
                fuse_states: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fused.miou, Some(1.0));
    }

    #[test]
    fn oracle_fixtures() {
        let gt_act = PixelMask::rect(10, 10, 0, 0, 1, 10).unwrap();
        let gt_trf = PixelMask::rect(10, 10, 9, 0, 1, 10).unwrap();
        let gts = vec![gt(0, gt_act.clone(), gt_trf.clone(), false)];
        // 10 px region: 7 on gt-act row 0, 1 on gt-trf row 9, 2 elsewhere
        let mut bits = vec![0u8; 100];
        bits[..7].fill(1);
        bits[90] = 1;
        bits[50] = 1;
        bits[51] = 1;
        let mixed = PixelMask::encode(10, 10, &bits).unwrap();
        let masklets = vec![
            Masklet::new(0, vec![MaskRegion::new(0, gt_act, None).unwrap()]).unwrap(),
            Masklet::new(
                1,
                vec![MaskRegion::new(0, PixelMask::rect(10, 10, 4, 4, 2, 2).unwrap(), None).unwrap()],
            )
            .unwrap(),
            Masklet::new(2, vec![MaskRegion::new(0, mixed, None).unwrap()]).unwrap(),
        ];
        let c = clip(masklets, Some(gts), 1);
        let out = oracle_labels(&c, ORACLE_OVERLAP).unwrap();
        assert_eq!(out[&0].labels[&0], StateLabel::Actionable);
        assert_eq!(out[&1].labels[&0], StateLabel::Background);
        assert_eq!(out[&2].labels[&0], StateLabel::Actionable);
    }
}
