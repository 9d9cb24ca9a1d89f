//! Pseudo-labels from vision-language similarity scores.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, EvalConfig};
use crate::model::{
    ClipLabels, ClipRecord, CorpusLabels, LabelSequence, MaskRegion, SimilarityPair, StateLabel, TextEmbeddings,
};

/// `tau` gates object vs background on the score sum, `delta` separates the two states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub tau: f64,
    pub delta: f64,
}

impl ThresholdConfig {
    pub const DEFAULT: ThresholdConfig = ThresholdConfig { tau: 0.5, delta: 0.01 };

    pub fn new(tau: f64, delta: f64) -> Result<Self> {
        let cfg = ThresholdConfig { tau, delta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::invalid(
                "threshold config",
                format!("tau must be finite, got {}", self.tau),
            ));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::invalid(
                "threshold config",
                format!("delta must be finite and non-negative, got {}", self.delta),
            ));
        }
        Ok(())
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig::DEFAULT
    }
}

/// Per-verb thresholds with a global fallback.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    #[serde(default)]
    pub default: ThresholdConfig,
    #[serde(default)]
    pub verbs: BTreeMap<String, ThresholdConfig>,
}

impl ThresholdTable {
    pub fn for_verb(&self, verb: &str) -> ThresholdConfig {
        self.verbs.get(verb).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<()> {
        self.default.validate()?;
        self.verbs.values().try_for_each(|c| c.validate())
    }
}

pub fn compute_similarity(z_v: &[f64], text: &TextEmbeddings) -> Result<SimilarityPair> {
    if z_v.len() != text.dim() {
        return Err(Error::VectorDimension {
            expected: text.dim(),
            got: z_v.len(),
        });
    }
    let dot = |z: &[f64]| z_v.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
    SimilarityPair::new(dot(&text.z_act), dot(&text.z_trf))
}

/// Thresholding rule, evaluated in order: background on low sum, ambiguous on
/// near-tie, then the larger score wins. An exact tie that passes the
/// ambiguity test (possible only with `delta == 0`) falls through to
/// `Transformed`.
pub fn threshold_label(scores: SimilarityPair, cfg: ThresholdConfig) -> StateLabel {
    let SimilarityPair { s_act, s_trf } = scores;
    if s_act + s_trf < cfg.tau {
        StateLabel::Background
    } else if (s_act - s_trf).abs() < cfg.delta {
        StateLabel::Ambiguous
    } else if s_act > s_trf {
        StateLabel::Actionable
    } else {
        StateLabel::Transformed
    }
}

/// Scores for a region: precomputed scores win over a raw embedding.
pub fn region_scores(region: &MaskRegion, text: Option<&TextEmbeddings>) -> Option<Result<SimilarityPair>> {
    if let Some(s) = region.scores {
        return Some(Ok(s));
    }
    match (&region.embedding, text) {
        (Some(z), Some(t)) => Some(compute_similarity(z, t)),
        _ => None,
    }
}

pub fn pseudo_label_clip(clip: &ClipRecord, cfg: ThresholdConfig) -> Result<ClipLabels> {
    let mut out = ClipLabels::new();
    for masklet in &clip.masklets {
        let mut seq = LabelSequence::new(masklet.track_id);
        for region in masklet.regions() {
            let scores = region_scores(region, clip.text_embeddings.as_ref()).ok_or(Error::MissingEvidence {
                track_id: masklet.track_id,
                frame: region.frame_index,
            })??;
            seq.labels.insert(region.frame_index, threshold_label(scores, cfg));
        }
        out.insert(masklet.track_id, seq);
    }
    Ok(out)
}

/// Labels a corpus with per-verb thresholds. Output order is independent of
/// the worker count.
pub fn pseudo_label_corpus(clips: &[ClipRecord], table: &ThresholdTable) -> Result<CorpusLabels> {
    clips
        .par_iter()
        .map(|c| Ok((c.clip_id.clone(), pseudo_label_clip(c, table.for_verb(&c.osc.verb))?)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub verb: String,
    pub tau: f64,
    pub delta: f64,
    pub miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub best: BTreeMap<String, ThresholdConfig>,
    /// Every evaluated cell, sorted by verb then (tau, delta).
    pub grid: Vec<GridCell>,
}

impl GridSearchResult {
    pub fn to_table(&self) -> ThresholdTable {
        ThresholdTable {
            default: ThresholdConfig::DEFAULT,
            verbs: self.best.clone(),
        }
    }
}

/// Cartesian product of candidate `tau` and `delta` values.
pub fn candidate_grid(taus: &[f64], deltas: &[f64]) -> Result<Vec<ThresholdConfig>> {
    taus.iter()
        .flat_map(|&t| deltas.iter().map(move |&d| ThresholdConfig::new(t, d)))
        .collect()
}

/// Picks, per verb, the candidate whose raw pseudo-labels score the highest
/// mIoU on the dev clips. Ties go to the lower `tau`, then the lower `delta`;
/// an undefined mIoU never wins over a defined one.
pub fn grid_search_thresholds(
    candidates: &[ThresholdConfig],
    clips: &[ClipRecord],
    eval: &EvalConfig,
) -> Result<GridSearchResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    candidates.iter().try_for_each(|c| c.validate())?;
    let mut ordered = candidates.to_vec();
    ordered.sort_by(|a, b| a.tau.total_cmp(&b.tau).then(a.delta.total_cmp(&b.delta)));
    ordered.dedup();

    let mut by_verb: BTreeMap<&str, Vec<&ClipRecord>> = BTreeMap::new();
    for clip in clips {
        by_verb.entry(clip.osc.verb.as_str()).or_default().push(clip);
    }

    let mut best = BTreeMap::new();
    let mut grid = Vec::new();
    for (verb, verb_clips) in by_verb {
        let dev: Vec<ClipRecord> = verb_clips.into_iter().cloned().collect();
        let scores = ordered
            .par_iter()
            .map(|&cfg| {
                let labels = dev
                    .iter()
                    .map(|c| Ok((c.clip_id.clone(), pseudo_label_clip(c, cfg)?)))
                    .collect::<Result<CorpusLabels>>()?;
                let preds = metrics::composite_corpus(&dev, &labels)?;
                Ok(metrics::evaluate(&dev, &preds, eval)?.miou)
            })
            .collect::<Result<Vec<Option<f64>>>>()?;

        let mut winner: Option<(ThresholdConfig, f64)> = None;
        for (&cfg, &miou) in ordered.iter().zip(&scores) {
            grid.push(GridCell {
                verb: verb.to_string(),
                tau: cfg.tau,
                delta: cfg.delta,
                miou,
            });
            let score = miou.unwrap_or(f64::NEG_INFINITY);
            if winner.is_none_or(|(_, s)| score > s) {
                winner = Some((cfg, score));
            }
        }
        if let Some((cfg, _)) = winner {
            best.insert(verb.to_string(), cfg);
        }
    }
    Ok(GridSearchResult { best, grid })
}
