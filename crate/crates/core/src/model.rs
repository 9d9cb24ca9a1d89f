//! Clip, track, label and ground-truth data model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::PixelMask;

pub type TrackId = u32;
pub type FrameIndex = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StateLabel {
    #[serde(rename = "actionable")]
    Actionable,
    #[serde(rename = "transformed")]
    Transformed,
    /// Near-tied evidence; resolved by refinement, never an evaluated class.
    #[serde(rename = "ambiguous")]
    Ambiguous,
    #[serde(rename = "background")]
    Background,
}

impl StateLabel {
    pub const ALL: [StateLabel; 4] = [
        StateLabel::Actionable,
        StateLabel::Transformed,
        StateLabel::Ambiguous,
        StateLabel::Background,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StateLabel::Actionable => "actionable",
            StateLabel::Transformed => "transformed",
            StateLabel::Ambiguous => "ambiguous",
            StateLabel::Background => "background",
        }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Vision-language similarity of one region against the two state prompts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub s_act: f64,
    pub s_trf: f64,
}

impl SimilarityPair {
    pub fn new(s_act: f64, s_trf: f64) -> Result<Self> {
        if !s_act.is_finite() || !s_trf.is_finite() {
            return Err(Error::invalid(
                "similarity pair",
                format!("non-finite scores ({s_act}, {s_trf})"),
            ));
        }
        Ok(SimilarityPair { s_act, s_trf })
    }

    pub fn swapped(self) -> Self {
        SimilarityPair {
            s_act: self.s_trf,
            s_trf: self.s_act,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRegion {
    pub frame_index: FrameIndex,
    pub mask: PixelMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<SimilarityPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    /// `[x0, y0, x1, y1]` in pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[u32; 4]>,
}

impl MaskRegion {
    pub fn new(frame_index: FrameIndex, mask: PixelMask, scores: Option<SimilarityPair>) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::invalid(
                "mask region",
                format!("frame {frame_index}: mask has no foreground pixels"),
            ));
        }
        Ok(MaskRegion {
            frame_index,
            mask,
            scores,
            embedding: None,
            bbox: None,
        })
    }
}

/// Time-indexed track of one object-region proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct Masklet {
    pub track_id: TrackId,
    regions: Vec<MaskRegion>,
}

impl Masklet {
    pub fn new(track_id: TrackId, regions: Vec<MaskRegion>) -> Result<Self> {
        for pair in regions.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::invalid(
                    "masklet",
                    format!(
                        "track {track_id}: frame indices not strictly increasing ({} then {})",
                        pair[0].frame_index, pair[1].frame_index
                    ),
                ));
            }
        }
        if let Some(first) = regions.first() {
            if let Some(bad) = regions.iter().find(|r| !r.mask.same_shape(&first.mask)) {
                return Err(Error::invalid(
                    "masklet",
                    format!(
                        "track {track_id} frame {}: mask shape differs from the track's first mask",
                        bad.frame_index
                    ),
                ));
            }
        }
        Ok(Masklet { track_id, regions })
    }

    pub fn regions(&self) -> &[MaskRegion] {
        &self.regions
    }

    pub fn regions_mut(&mut self) -> impl Iterator<Item = &mut MaskRegion> {
        self.regions.iter_mut()
    }

    pub fn frame_indices(&self) -> impl Iterator<Item = FrameIndex> + '_ {
        self.regions.iter().map(|r| r.frame_index)
    }

    pub fn region_at(&self, frame: FrameIndex) -> Option<&MaskRegion> {
        self.regions
            .binary_search_by_key(&frame, |r| r.frame_index)
            .ok()
            .map(|i| &self.regions[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FramePhase {
    Initial,
    Transition,
    End,
    Unlabeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Seen,
    Novel,
    Unlabeled,
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(SplitTag::Seen),
            "novel" => Ok(SplitTag::Novel),
            "unlabeled" => Ok(SplitTag::Unlabeled),
            other => Err(Error::invalid("split tag", other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OscDescriptor {
    pub verb: String,
    pub noun: String,
    pub prompt_act: String,
    pub prompt_trf: String,
}

impl OscDescriptor {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("verb", &self.verb),
            ("noun", &self.noun),
            ("prompt_act", &self.prompt_act),
            ("prompt_trf", &self.prompt_trf),
        ] {
            if value.trim().is_empty() {
                return Err(Error::invalid("osc descriptor", format!("empty {name}")));
            }
        }
        Ok(())
    }
}

/// Prompt embeddings for the two states, used when regions carry raw embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEmbeddings {
    pub z_act: Vec<f64>,
    pub z_trf: Vec<f64>,
}

impl TextEmbeddings {
    pub fn new(z_act: Vec<f64>, z_trf: Vec<f64>) -> Result<Self> {
        if z_act.len() != z_trf.len() {
            return Err(Error::VectorDimension {
                expected: z_act.len(),
                got: z_trf.len(),
            });
        }
        if z_act.iter().chain(&z_trf).any(|v| !v.is_finite()) {
            return Err(Error::invalid("text embeddings", "non-finite entry"));
        }
        Ok(TextEmbeddings { z_act, z_trf })
    }

    pub fn dim(&self) -> usize {
        self.z_act.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame_index: FrameIndex,
    pub actionable: PixelMask,
    pub transformed: PixelMask,
    #[serde(default)]
    pub ignored: bool,
}

impl GroundTruthFrame {
    pub fn new(frame_index: FrameIndex, actionable: PixelMask, transformed: PixelMask, ignored: bool) -> Result<Self> {
        let overlap = actionable.intersection_area(&transformed)?;
        if overlap > 0 {
            return Err(Error::invalid(
                "ground truth frame",
                format!("frame {frame_index}: actionable and transformed masks share {overlap} pixels"),
            ));
        }
        Ok(GroundTruthFrame {
            frame_index,
            actionable,
            transformed,
            ignored,
        })
    }
}

/// One video clip with its tracked proposals and optional annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub osc: OscDescriptor,
    pub frame_count: u32,
    pub fps: f64,
    pub frame_phases: Vec<FramePhase>,
    pub masklets: Vec<Masklet>,
    pub split_tag: SplitTag,
    pub text_embeddings: Option<TextEmbeddings>,
    /// Detector re-run cadence in frames, carried as metadata.
    pub detection_interval: Option<u32>,
    /// Sorted by frame index, at most one entry per frame.
    pub ground_truth: Option<Vec<GroundTruthFrame>>,
}

impl ClipRecord {
    /// Checks every cross-field invariant, naming the offending track or frame.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::invalid("clip", format!("{}: {reason}", self.clip_id)));
        if self.clip_id.is_empty() {
            return fail("empty clip id".into());
        }
        self.osc.validate()?;
        if self.frame_count == 0 {
            return fail("frame_count must be positive".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        if self.frame_phases.len() != self.frame_count as usize {
            return fail(format!(
                "{} frame phases for {} frames",
                self.frame_phases.len(),
                self.frame_count
            ));
        }
        let shape = self.grid();
        let mut ids = BTreeSet::new();
        for m in &self.masklets {
            if !ids.insert(m.track_id) {
                return fail(format!("duplicate track id {}", m.track_id));
            }
            for r in m.regions() {
                if r.frame_index >= self.frame_count {
                    return fail(format!(
                        "track {} frame {}: index beyond frame_count {}",
                        m.track_id, r.frame_index, self.frame_count
                    ));
                }
                if Some((r.mask.height(), r.mask.width())) != shape {
                    return fail(format!(
                        "track {} frame {}: mask shape differs from clip grid",
                        m.track_id, r.frame_index
                    ));
                }
                if let (Some(e), Some(t)) = (&r.embedding, &self.text_embeddings) {
                    if e.len() != t.dim() {
                        return fail(format!(
                            "track {} frame {}: embedding dim {} != text dim {}",
                            m.track_id,
                            r.frame_index,
                            e.len(),
                            t.dim()
                        ));
                    }
                }
            }
        }
        if let Some(gt) = &self.ground_truth {
            let mut last = None;
            for g in gt {
                if g.frame_index >= self.frame_count {
                    return fail(format!("ground truth frame {} beyond frame_count", g.frame_index));
                }
                if last.is_some_and(|l| g.frame_index <= l) {
                    return fail(format!(
                        "ground truth frame {} out of order or duplicated",
                        g.frame_index
                    ));
                }
                last = Some(g.frame_index);
                if shape.is_some_and(|s| s != (g.actionable.height(), g.actionable.width()))
                    || !g.actionable.same_shape(&g.transformed)
                {
                    return fail(format!(
                        "ground truth frame {}: mask shape differs from clip grid",
                        g.frame_index
                    ));
                }
                if g.actionable.intersection_area(&g.transformed)? > 0 {
                    return fail(format!(
                        "ground truth frame {}: actionable and transformed masks overlap",
                        g.frame_index
                    ));
                }
            }
        }
        Ok(())
    }

    /// Grid shape shared by all masks, if the clip has any.
    pub fn grid(&self) -> Option<(u32, u32)> {
        self.masklets
            .iter()
            .flat_map(|m| m.regions().first())
            .map(|r| (r.mask.height(), r.mask.width()))
            .next()
            .or_else(|| {
                self.ground_truth
                    .as_ref()
                    .and_then(|g| g.first())
                    .map(|g| (g.actionable.height(), g.actionable.width()))
            })
    }

    pub fn masklet(&self, track_id: TrackId) -> Option<&Masklet> {
        self.masklets.iter().find(|m| m.track_id == track_id)
    }

    pub fn gt_frame(&self, frame: FrameIndex) -> Option<&GroundTruthFrame> {
        let gt = self.ground_truth.as_ref()?;
        gt.binary_search_by_key(&frame, |g| g.frame_index).ok().map(|i| &gt[i])
    }
}

/// Per-masklet labels keyed by frame index.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub track_id: TrackId,
    pub labels: BTreeMap<FrameIndex, StateLabel>,
}

impl LabelSequence {
    pub fn new(track_id: TrackId) -> Self {
        LabelSequence {
            track_id,
            labels: BTreeMap::new(),
        }
    }

    /// Builds a sequence over frames `0..labels.len()`.
    pub fn from_slice(track_id: TrackId, labels: &[StateLabel]) -> Self {
        LabelSequence {
            track_id,
            labels: labels.iter().enumerate().map(|(i, &l)| (i as FrameIndex, l)).collect(),
        }
    }

    /// Ascending frame indices carrying label `class`.
    pub fn index_set(&self, class: StateLabel) -> Vec<FrameIndex> {
        self.labels
            .iter()
            .filter(|(_, &l)| l == class)
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn values(&self) -> Vec<StateLabel> {
        self.labels.values().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labels for every masklet of one clip.
pub type ClipLabels = BTreeMap<TrackId, LabelSequence>;

/// Labels for a corpus, keyed by clip id.
pub type CorpusLabels = BTreeMap<String, ClipLabels>;
