//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use osclabel::model::{
    ClipRecord, FramePhase, GroundTruthFrame, MaskRegion, Masklet, OscDescriptor, SimilarityPair, SplitTag, StateLabel,
};
use osclabel::PixelMask;
use rand::Rng;

/// Row-major grid with random rectangles and salt noise.
pub fn random_grid(rng: &mut impl Rng, h: usize, w: usize) -> Vec<u8> {
    let density: f64 = rng.gen();
    let mut g: Vec<u8> = (0..h * w).map(|_| (rng.gen::<f64>() < density * 0.3) as u8).collect();
    for _ in 0..rng.gen_range(0..3) {
        let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (y1, x1) = (rng.gen_range(y0..h) + 1, rng.gen_range(x0..w) + 1);
        for y in y0..y1 {
            for x in x0..x1 {
                g[y * w + x] = 1;
            }
        }
    }
    g
}

pub fn count(grid: &[u8]) -> u64 {
    grid.iter().filter(|&&b| b != 0).count() as u64
}

/// IoU from decoded pixel grids; `None` when both are empty.
pub fn iou_oracle(a: &[u8], b: &[u8]) -> Option<f64> {
    let inter = a.iter().zip(b).filter(|(&x, &y)| x != 0 && y != 0).count();
    let union = a.iter().zip(b).filter(|(&x, &y)| x != 0 || y != 0).count();
    (union > 0).then(|| inter as f64 / union as f64)
}

/// Straight-line thresholding rule with all predicates computed up front.
pub fn threshold_oracle(s_act: f64, s_trf: f64, tau: f64, delta: f64) -> StateLabel {
    let low_sum = s_act + s_trf < tau;
    let near_tie = (s_act - s_trf).abs() < delta;
    let act_wins = s_act > s_trf;
    match (low_sum, near_tie, act_wins) {
        (true, _, _) => StateLabel::Background,
        (false, true, _) => StateLabel::Ambiguous,
        (false, false, true) => StateLabel::Actionable,
        (false, false, false) => StateLabel::Transformed,
    }
}

/// O(n²) pair enumeration: (increasing - non-increasing) / pairs.
pub fn tau_oracle(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let (mut inc, mut non) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            if values[j] > values[i] {
                inc += 1;
            } else {
                non += 1;
            }
        }
    }
    Some((inc - non) as f64 / (inc + non) as f64)
}

pub fn osc(verb: &str) -> OscDescriptor {
    OscDescriptor {
        verb: verb.into(),
        noun: "onion".into(),
        prompt_act: "whole onion".into(),
        prompt_trf: "chopped onion".into(),
    }
}

pub fn region(frame: u32, mask: PixelMask, s_act: f64, s_trf: f64) -> MaskRegion {
    MaskRegion::new(frame, mask, Some(SimilarityPair::new(s_act, s_trf).unwrap())).unwrap()
}

pub fn single_frame_clip(
    id: &str,
    verb: &str,
    masklets: Vec<Masklet>,
    gt: Option<Vec<GroundTruthFrame>>,
) -> ClipRecord {
    ClipRecord {
        clip_id: id.into(),
        osc: osc(verb),
        frame_count: 1,
        fps: 1.0,
        frame_phases: vec![FramePhase::Unlabeled],
        masklets,
        split_tag: SplitTag::Seen,
        text_embeddings: None,
        detection_interval: None,
        ground_truth: gt,
    }
}

pub fn empty_manifest() -> osclabel::io::DatasetManifest {
    osclabel::io::DatasetManifest {
        format_version: 1,
        score_convention: Default::default(),
        embedding_dim: None,
        clips: vec![],
        thresholds_file: None,
        splits_file: None,
        config_hash: None,
        metadata: Default::default(),
    }
}
