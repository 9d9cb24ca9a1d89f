//! Synthetic clips with planted change-points and controllable score noise.
//!
//! Each masklet owns a disjoint vertical strip of the grid. It shows a
//! rectangle while actionable and a rectangle grown from the same corner once
//! transformed, so per-frame actionable area never increases. All randomness
//! comes from ChaCha8 seeded with `seed + clip_index`; score perturbation uses
//! stream 1 of the same per-clip generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::PixelMask;
use crate::model::{
    ClipRecord, CorpusLabels, FramePhase, GroundTruthFrame, LabelSequence, MaskRegion, Masklet, OscDescriptor,
    SimilarityPair, SplitTag, StateLabel,
};

pub const RNG_ALGORITHM: &str = "chacha8";

const VERBS: [(&str, &str, &str, &str); 4] = [
    ("chop", "avocado", "whole avocado", "chopped avocado pieces"),
    ("grate", "carrot", "whole carrot", "grated carrot shreds"),
    ("peel", "potato", "unpeeled potato", "peeled potato"),
    ("mash", "banana", "whole banana", "mashed banana"),
];

/// Largest score gap written by an ambiguous collapse; below the default `delta`.
const COLLAPSE_GAP: f64 = 0.005;
const MIN_CELL: u32 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub clips: u32,
    pub frames_per_clip: u32,
    pub masklets_per_clip: u32,
    pub grid: (u32, u32),
    /// Change-points are drawn as `round(u * frames)` with `u` uniform in this window.
    pub transition_window: (f64, f64),
    pub noise_flip_prob: f64,
    pub ambiguous_prob: f64,
    pub score_margin: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            clips: 8,
            frames_per_clip: 20,
            masklets_per_clip: 3,
            grid: (32, 48),
            transition_window: (0.2, 0.8),
            noise_flip_prob: 0.0,
            ambiguous_prob: 0.0,
            score_margin: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.transition_window;
        let bad = |reason: String| Err(Error::invalid("synth config", reason));
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad(format!("transition window ({lo}, {hi}) must be ordered within [0, 1]"));
        }
        for (name, p) in [
            ("noise_flip_prob", self.noise_flip_prob),
            ("ambiguous_prob", self.ambiguous_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if !(self.score_margin.is_finite() && self.score_margin > 0.0 && self.score_margin <= 0.2) {
            return bad(format!("score_margin = {} outside (0, 0.2]", self.score_margin));
        }
        if self.frames_per_clip == 0 {
            return bad("frames_per_clip must be positive".into());
        }
        let (h, w) = self.grid;
        if h < MIN_CELL || self.masklets_per_clip.saturating_mul(MIN_CELL) > w {
            return bad(format!(
                "grid {h}x{w} too small for {} masklets (each needs a {MIN_CELL}x{MIN_CELL} cell)",
                self.masklets_per_clip
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub clips: Vec<ClipRecord>,
    pub truth: CorpusLabels,
}

fn clip_rng(seed: u64, clip_index: u32, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(clip_index as u64));
    rng.set_stream(stream);
    rng
}

fn clean_scores(rng: &mut ChaCha8Rng, label: StateLabel, margin: f64) -> SimilarityPair {
    let sum = 0.6 + 0.2 * rng.gen::<f64>();
    let gap = margin * (1.0 + rng.gen::<f64>());
    let (win, lose) = ((sum + gap) / 2.0, (sum - gap) / 2.0);
    match label {
        StateLabel::Actionable => SimilarityPair {
            s_act: win,
            s_trf: lose,
        },
        _ => SimilarityPair {
            s_act: lose,
            s_trf: win,
        },
    }
}

fn generate_clip(cfg: &SynthConfig, index: u32) -> Result<(ClipRecord, Vec<LabelSequence>)> {
    let mut rng = clip_rng(cfg.seed, index, 0);
    let (h, w) = cfg.grid;
    let frames = cfg.frames_per_clip;
    let k = cfg.masklets_per_clip;
    let cell_w = w.checked_div(k).unwrap_or(w);

    let mut masklets = Vec::new();
    let mut truth = Vec::new();
    let mut change_points = Vec::new();
    for track in 0..k {
        let cell_left = track * cell_w;
        let top = rng.gen_range(0..h / 4);
        let left = cell_left + rng.gen_range(0..cell_w / 4);
        let rows = rng.gen_range((h / 4).max(1)..=h / 2);
        let cols = rng.gen_range((cell_w / 4).max(1)..=cell_w / 2);
        let grown_rows = (rows + rng.gen_range(0..=h / 4)).min(h - top);
        let grown_cols = (cols + rng.gen_range(0..=cell_w / 4)).min(cell_left + cell_w - left);
        let act_mask = PixelMask::rect(h, w, top, left, rows, cols)?;
        let trf_mask = PixelMask::rect(h, w, top, left, grown_rows, grown_cols)?;

        let (lo, hi) = cfg.transition_window;
        let u = lo + (hi - lo) * rng.gen::<f64>();
        let change = ((u * frames as f64).round() as u32).min(frames);
        change_points.push(change);

        let mut seq = LabelSequence::new(track);
        let mut regions = Vec::with_capacity(frames as usize);
        for t in 0..frames {
            let label = if t < change {
                StateLabel::Actionable
            } else {
                StateLabel::Transformed
            };
            let mask = if label == StateLabel::Actionable {
                &act_mask
            } else {
                &trf_mask
            };
            let scores = clean_scores(&mut rng, label, cfg.score_margin);
            regions.push(MaskRegion::new(t, mask.clone(), Some(scores))?);
            seq.labels.insert(t, label);
        }
        masklets.push(Masklet::new(track, regions)?);
        truth.push(seq);
    }

    let first_change = change_points.iter().copied().min().unwrap_or(frames);
    let last_change = change_points.iter().copied().max().unwrap_or(frames);
    let frame_phases = (0..frames)
        .map(|t| {
            if t < first_change {
                FramePhase::Initial
            } else if t >= last_change {
                FramePhase::End
            } else {
                FramePhase::Transition
            }
        })
        .collect();

    let empty = PixelMask::empty(h, w)?;
    let ground_truth = (0..frames)
        .map(|t| {
            let (mut act, mut trf) = (empty.clone(), empty.clone());
            for (m, seq) in masklets.iter().zip(&truth) {
                let region = &m.regions()[t as usize];
                match seq.labels[&t] {
                    StateLabel::Actionable => act = act.union(&region.mask)?,
                    _ => trf = trf.union(&region.mask)?,
                }
            }
            GroundTruthFrame::new(t, act, trf, false)
        })
        .collect::<Result<Vec<_>>>()?;

    let (verb, noun, prompt_act, prompt_trf) = VERBS[index as usize % VERBS.len()];
    let clip = ClipRecord {
        clip_id: format!("synth_{index:05}"),
        osc: OscDescriptor {
            verb: verb.into(),
            noun: noun.into(),
            prompt_act: prompt_act.into(),
            prompt_trf: prompt_trf.into(),
        },
        frame_count: frames,
        fps: 1.0,
        frame_phases,
        masklets,
        split_tag: if index % 3 == 2 {
            SplitTag::Novel
        } else {
            SplitTag::Seen
        },
        text_embeddings: None,
        detection_interval: Some(10),
        ground_truth: Some(ground_truth),
    };
    Ok((clip, truth))
}

/// Clean corpus plus its true labels, then score noise per `cfg`.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut clips = Vec::with_capacity(cfg.clips as usize);
    let mut truth = CorpusLabels::new();
    for i in 0..cfg.clips {
        let (clip, seqs) = generate_clip(cfg, i)?;
        truth.insert(
            clip.clip_id.clone(),
            seqs.into_iter().map(|s| (s.track_id, s)).collect(),
        );
        clips.push(clip);
    }
    let (clips, _) = perturb_scores(&clips, cfg.noise_flip_prob, cfg.ambiguous_prob, cfg.seed)?;
    Ok(SynthCorpus { clips, truth })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PerturbStats {
    pub regions: u64,
    pub flipped: u64,
    pub collapsed: u64,
}

/// Per region, independently: swap the score pair with `flip_prob`, then with
/// `ambiguous_prob` pull both scores to within a hair of their mean.
pub fn perturb_scores(
    clips: &[ClipRecord],
    flip_prob: f64,
    ambiguous_prob: f64,
    seed: u64,
) -> Result<(Vec<ClipRecord>, PerturbStats)> {
    for p in [flip_prob, ambiguous_prob] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(
                "perturbation",
                format!("probability {p} outside [0, 1]"),
            ));
        }
    }
    let mut stats = PerturbStats::default();
    let mut out = clips.to_vec();
    for (index, clip) in out.iter_mut().enumerate() {
        let mut rng = clip_rng(seed, index as u32, 1);
        for masklet in &mut clip.masklets {
            for region in masklet.regions_mut() {
                let (u_flip, u_amb, u_gap): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
                let Some(mut s) = region.scores else { continue };
                stats.regions += 1;
                if u_flip < flip_prob {
                    s = s.swapped();
                    stats.flipped += 1;
                }
                if u_amb < ambiguous_prob {
                    let mid = (s.s_act + s.s_trf) / 2.0;
                    let gap = COLLAPSE_GAP * u_gap;
                    let sign = if s.s_act >= s.s_trf { 1.0 } else { -1.0 };
                    s = SimilarityPair {
                        s_act: mid + sign * gap / 2.0,
                        s_trf: mid - sign * gap / 2.0,
                    };
                    stats.collapsed += 1;
                }
                region.scores = Some(s);
            }
        }
    }
    Ok((out, stats))
}

/// Fraction of labeled frames whose prediction matches the truth. Ambiguous
/// predictions never match.
pub fn label_accuracy(predicted: &CorpusLabels, truth: &CorpusLabels) -> Result<f64> {
    let mut total = 0u64;
    let mut correct = 0u64;
    if predicted.len() != truth.len() {
        return Err(Error::invalid("label accuracy", "clip sets differ"));
    }
    for (clip_id, truth_clip) in truth {
        let pred_clip = predicted
            .get(clip_id)
            .ok_or_else(|| Error::invalid("label accuracy", format!("clip {clip_id} missing from predictions")))?;
        if pred_clip.len() != truth_clip.len() {
            return Err(Error::invalid(
                "label accuracy",
                format!("track sets differ in clip {clip_id}"),
            ));
        }
        for (track, t_seq) in truth_clip {
            let mismatch = || Error::IndexMismatch {
                clip_id: clip_id.clone(),
                track_id: *track,
            };
            let p_seq = pred_clip.get(track).ok_or_else(mismatch)?;
            if !p_seq.labels.keys().eq(t_seq.labels.keys()) {
                return Err(mismatch());
            }
            for (p, t) in p_seq.labels.values().zip(t_seq.labels.values()) {
                total += 1;
                if p == t && *p != StateLabel::Ambiguous {
                    correct += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("label accuracy", "no labeled frames"));
    }
    Ok(correct as f64 / total as f64)
}
