//! On-disk formats: dataset manifest, per-clip files, label files and CSV
//! artifact headers.
//!
//! Everything is JSON except tabular outputs, which are CSV preceded by one
//! `# key=value ...` metadata line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labeling::ThresholdTable;
use crate::mask::{PixelMask, RawMask};
use crate::model::{
    ClipLabels, ClipRecord, CorpusLabels, FrameIndex, FramePhase, GroundTruthFrame, LabelSequence, MaskRegion, Masklet,
    OscDescriptor, SimilarityPair, SplitTag, StateLabel, TextEmbeddings, TrackId,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreConvention {
    #[default]
    #[serde(rename = "raw-dot")]
    RawDot,
    #[serde(rename = "cosine")]
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(default)]
    pub score_convention: ScoreConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    /// Paths relative to the manifest's directory.
    pub clips: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub clips: Vec<ClipRecord>,
    pub thresholds: Option<ThresholdTable>,
}

#[derive(Serialize, Deserialize)]
struct RegionFile {
    frame: FrameIndex,
    mask: RawMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<SimilarityPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[u32; 4]>,
}

#[derive(Serialize, Deserialize)]
struct MaskletFile {
    track_id: TrackId,
    regions: Vec<RegionFile>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    frame: FrameIndex,
    actionable: RawMask,
    transformed: RawMask,
    #[serde(default)]
    ignored: bool,
}

#[derive(Serialize, Deserialize)]
struct ClipFile {
    format_version: u32,
    clip_id: String,
    osc: OscDescriptor,
    frame_count: u32,
    fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detection_interval: Option<u32>,
    #[serde(default = "unlabeled_split")]
    split: SplitTag,
    frame_phases: Vec<FramePhase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_embeddings: Option<TextEmbeddings>,
    masklets: Vec<MaskletFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<Vec<GroundTruthFile>>,
}

fn unlabeled_split() -> SplitTag {
    SplitTag::Unlabeled
}

fn raw(mask: &PixelMask) -> RawMask {
    RawMask {
        height: mask.height(),
        width: mask.width(),
        runs: mask.runs().to_vec(),
    }
}

/// Short hex digest of a value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// `# format_version=1 config_hash=... k=v ...` line for CSV artifacts.
pub fn csv_header(hash: &str, extra: &[(&str, String)]) -> String {
    let mut line = format!("# format_version={FORMAT_VERSION} config_hash={hash}");
    for (k, v) in extra {
        line.push_str(&format!(" {k}={v}"));
    }
    line.push('\n');
    line
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_text(path, &text)
}

fn load_error(path: &Path, location: impl Into<String>, message: impl ToString) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        location: location.into(),
        message: message.to_string(),
    }
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(load_error(
            path,
            "format_version",
            format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    Ok(())
}

fn clip_from_file(path: &Path, file: ClipFile) -> Result<ClipRecord> {
    check_version(path, file.format_version)?;
    let cid = file.clip_id.clone();
    let mask =
        |loc: &str, m: RawMask| PixelMask::try_from(m).map_err(|e| load_error(path, format!("clip {cid} {loc}"), e));

    let mut masklets = Vec::with_capacity(file.masklets.len());
    for m in file.masklets {
        let mut regions = Vec::with_capacity(m.regions.len());
        for r in m.regions {
            let loc = format!("track {} frame {}", m.track_id, r.frame);
            let pm = mask(&loc, r.mask)?;
            let scores = r
                .scores
                .map(|s| SimilarityPair::new(s.s_act, s.s_trf))
                .transpose()
                .map_err(|e| load_error(path, format!("clip {cid} {loc}"), e))?;
            let mut region =
                MaskRegion::new(r.frame, pm, scores).map_err(|e| load_error(path, format!("clip {cid} {loc}"), e))?;
            region.embedding = r.embedding;
            region.bbox = r.bbox;
            regions.push(region);
        }
        let masklet = Masklet::new(m.track_id, regions)
            .map_err(|e| load_error(path, format!("clip {cid} track {}", m.track_id), e))?;
        masklets.push(masklet);
    }

    let ground_truth = match file.ground_truth {
        None => None,
        Some(frames) => Some(
            frames
                .into_iter()
                .map(|g| {
                    let loc = format!("ground truth frame {}", g.frame);
                    let a = mask(&loc, g.actionable)?;
                    let t = mask(&loc, g.transformed)?;
                    GroundTruthFrame::new(g.frame, a, t, g.ignored)
                        .map_err(|e| load_error(path, format!("clip {cid} {loc}"), e))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    let text_embeddings = file
        .text_embeddings
        .map(|t| TextEmbeddings::new(t.z_act, t.z_trf))
        .transpose()
        .map_err(|e| load_error(path, format!("clip {cid} text_embeddings"), e))?;

    let clip = ClipRecord {
        clip_id: file.clip_id,
        osc: file.osc,
        frame_count: file.frame_count,
        fps: file.fps,
        frame_phases: file.frame_phases,
        masklets,
        split_tag: file.split,
        text_embeddings,
        detection_interval: file.detection_interval,
        ground_truth,
    };
    clip.validate()
        .map_err(|e| load_error(path, format!("clip {cid}"), e))?;
    Ok(clip)
}

fn clip_to_file(clip: &ClipRecord) -> ClipFile {
    ClipFile {
        format_version: FORMAT_VERSION,
        clip_id: clip.clip_id.clone(),
        osc: clip.osc.clone(),
        frame_count: clip.frame_count,
        fps: clip.fps,
        detection_interval: clip.detection_interval,
        split: clip.split_tag,
        frame_phases: clip.frame_phases.clone(),
        text_embeddings: clip.text_embeddings.clone(),
        masklets: clip
            .masklets
            .iter()
            .map(|m| MaskletFile {
                track_id: m.track_id,
                regions: m
                    .regions()
                    .iter()
                    .map(|r| RegionFile {
                        frame: r.frame_index,
                        mask: raw(&r.mask),
                        scores: r.scores,
                        embedding: r.embedding.clone(),
                        bbox: r.bbox,
                    })
                    .collect(),
            })
            .collect(),
        ground_truth: clip.ground_truth.as_ref().map(|gt| {
            gt.iter()
                .map(|g| GroundTruthFile {
                    frame: g.frame_index,
                    actionable: raw(&g.actionable),
                    transformed: raw(&g.transformed),
                    ignored: g.ignored,
                })
                .collect()
        }),
    }
}

pub fn load_clip(path: &Path) -> Result<ClipRecord> {
    let file: ClipFile = read_json(path).map_err(|e| match e {
        Error::Json { source, .. } => load_error(
            path,
            format!("line {} column {}", source.line(), source.column()),
            source,
        ),
        other => other,
    })?;
    clip_from_file(path, file)
}

pub fn save_clip(path: &Path, clip: &ClipRecord) -> Result<()> {
    write_json(path, &clip_to_file(clip))
}

/// Reads a manifest and every clip it references, validating all model invariants.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    if !manifest_path.exists() {
        return Err(load_error(manifest_path, "manifest", "file not found"));
    }
    let manifest: DatasetManifest = read_json(manifest_path)?;
    check_version(manifest_path, manifest.format_version)?;
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut clips = Vec::with_capacity(manifest.clips.len());
    let mut seen = BTreeSet::new();
    for (i, rel) in manifest.clips.iter().enumerate() {
        let path = root.join(rel);
        if !path.is_file() {
            return Err(load_error(
                manifest_path,
                format!("clips[{i}]"),
                format!("referenced clip file {} does not exist", path.display()),
            ));
        }
        let clip = load_clip(&path)?;
        if !seen.insert(clip.clip_id.clone()) {
            return Err(load_error(
                &path,
                format!("clip {}", clip.clip_id),
                "duplicate clip id in manifest",
            ));
        }
        if let Some(dim) = manifest.embedding_dim {
            for m in &clip.masklets {
                if let Some(r) = m
                    .regions()
                    .iter()
                    .find(|r| r.embedding.as_ref().is_some_and(|e| e.len() != dim))
                {
                    return Err(load_error(
                        &path,
                        format!("clip {} track {} frame {}", clip.clip_id, m.track_id, r.frame_index),
                        format!("embedding dimension differs from manifest embedding_dim {dim}"),
                    ));
                }
            }
        }
        clips.push(clip);
    }

    if let Some(rel) = &manifest.splits_file {
        let path = root.join(rel);
        if !path.is_file() {
            return Err(load_error(
                manifest_path,
                "splits_file",
                format!("{} does not exist", path.display()),
            ));
        }
        let splits: BTreeMap<String, SplitTag> = read_json(&path)?;
        for (id, tag) in &splits {
            let clip = clips
                .iter_mut()
                .find(|c| &c.clip_id == id)
                .ok_or_else(|| load_error(&path, format!("clip {id}"), "split assigned to unknown clip"))?;
            clip.split_tag = *tag;
        }
    }

    let thresholds = match &manifest.thresholds_file {
        None => None,
        Some(rel) => {
            let path = root.join(rel);
            if !path.is_file() {
                return Err(load_error(
                    manifest_path,
                    "thresholds_file",
                    format!("{} does not exist", path.display()),
                ));
            }
            Some(load_thresholds(&path)?)
        }
    };

    Ok(Dataset {
        manifest,
        root,
        clips,
        thresholds,
    })
}

/// Writes `manifest.json` plus `clips/<clip_id>.json` under `dir`.
pub fn save_dataset(dir: &Path, clips: &[ClipRecord], mut manifest: DatasetManifest) -> Result<PathBuf> {
    manifest.format_version = FORMAT_VERSION;
    manifest.clips = clips
        .iter()
        .map(|c| PathBuf::from("clips").join(format!("{}.json", c.clip_id)))
        .collect();
    for (clip, rel) in clips.iter().zip(&manifest.clips) {
        save_clip(&dir.join(rel), clip)?;
    }
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_thresholds(path: &Path) -> Result<ThresholdTable> {
    let table: ThresholdTable = read_json(path)?;
    table.validate().map_err(|e| load_error(path, "thresholds", e))?;
    Ok(table)
}

pub fn save_thresholds(path: &Path, table: &ThresholdTable) -> Result<()> {
    write_json(path, table)
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    format_version: u32,
    config_hash: String,
    stage: String,
    clips: BTreeMap<String, BTreeMap<TrackId, BTreeMap<FrameIndex, StateLabel>>>,
}

pub fn save_labels(path: &Path, labels: &CorpusLabels, stage: &str, hash: &str) -> Result<()> {
    let file = LabelFile {
        format_version: FORMAT_VERSION,
        config_hash: hash.to_string(),
        stage: stage.to_string(),
        clips: labels
            .iter()
            .map(|(id, tracks)| {
                let tracks = tracks.iter().map(|(&tid, seq)| (tid, seq.labels.clone())).collect();
                (id.clone(), tracks)
            })
            .collect(),
    };
    write_json(path, &file)
}

/// Reads a label file. When `clips` is given, every clip, track and frame
/// reference must exist in it and each sequence must cover exactly its
/// masklet's frames.
pub fn load_labels(path: &Path, clips: Option<&[ClipRecord]>) -> Result<CorpusLabels> {
    let file: LabelFile = read_json(path)?;
    check_version(path, file.format_version)?;
    let mut out = CorpusLabels::new();
    for (clip_id, tracks) in file.clips {
        let clip = match clips {
            Some(cs) => Some(
                cs.iter()
                    .find(|c| c.clip_id == clip_id)
                    .ok_or_else(|| load_error(path, format!("clip {clip_id}"), "labels for unknown clip"))?,
            ),
            None => None,
        };
        let mut clip_labels = ClipLabels::new();
        for (track_id, labels) in tracks {
            if let Some(clip) = clip {
                let masklet = clip.masklet(track_id).ok_or_else(|| {
                    load_error(
                        path,
                        format!("clip {clip_id} track {track_id}"),
                        Error::UnknownTrack {
                            clip_id: clip_id.clone(),
                            track_id,
                        },
                    )
                })?;
                if !labels.keys().copied().eq(masklet.frame_indices()) {
                    return Err(load_error(
                        path,
                        format!("clip {clip_id} track {track_id}"),
                        "labeled frames differ from the masklet's frames",
                    ));
                }
            }
            clip_labels.insert(track_id, LabelSequence { track_id, labels });
        }
        out.insert(clip_id, clip_labels);
    }
    Ok(out)
}
