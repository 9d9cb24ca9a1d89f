mod common;

use std::fs;

use osclabel::io::{load_dataset, load_labels, load_thresholds, save_dataset, save_labels, save_thresholds};
use osclabel::labeling::{ThresholdConfig, ThresholdTable};
use osclabel::model::{CorpusLabels, GroundTruthFrame};
use osclabel::synth::{generate_corpus, SynthConfig};
use osclabel::{Error, PixelMask};

use common::*;

fn corpus(dir: &std::path::Path) -> (osclabel::synth::SynthCorpus, std::path::PathBuf) {
    let corpus = generate_corpus(&SynthConfig {
        clips: 3,
        ..Default::default()
    })
    .unwrap();
    let manifest = save_dataset(dir, &corpus.clips, empty_manifest()).unwrap();
    (corpus, manifest)
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, manifest) = corpus(dir.path());
    let loaded = load_dataset(&manifest).unwrap();
    assert_eq!(loaded.clips, corpus.clips);
}

#[test]
fn missing_clip_file_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = corpus(dir.path());
    fs::remove_file(dir.path().join("clips/synth_00002.json")).unwrap();
    let msg = load_dataset(&manifest).unwrap_err().to_string();
    assert!(msg.contains("synth_00002.json"), "{msg}");
}

#[test]
fn missing_manifest_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let msg = load_dataset(&dir.path().join("nope.json")).unwrap_err().to_string();
    assert!(msg.contains("nope.json"), "{msg}");
}

#[test]
fn unknown_format_version_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = corpus(dir.path());
    let text = fs::read_to_string(&manifest)
        .unwrap()
        .replace("\"format_version\": 1", "\"format_version\": 9");
    fs::write(&manifest, text).unwrap();
    let msg = load_dataset(&manifest).unwrap_err().to_string();
    assert!(msg.contains('9'), "{msg}");
}

#[test]
fn non_canonical_rle_rejected() {
    assert!(PixelMask::from_runs(2, 2, vec![1, 0, 3]).is_err());
    assert!(PixelMask::from_runs(2, 2, vec![2, 1]).is_err());
    assert!(PixelMask::from_runs(2, 2, vec![]).is_err());
    assert!(PixelMask::from_runs(0, 2, vec![0]).is_err());
    let err = serde_json::from_str::<PixelMask>(r#"{"height":2,"width":2,"runs":[5]}"#).unwrap_err();
    assert!(err.to_string().contains("sum"), "{err}");
}

#[test]
fn overlapping_ground_truth_rejected() {
    let a = PixelMask::rect(4, 4, 0, 0, 2, 2).unwrap();
    let t = PixelMask::rect(4, 4, 1, 1, 2, 2).unwrap();
    let err = GroundTruthFrame::new(7, a, t, false).unwrap_err();
    assert!(err.to_string().contains("frame 7"), "{err}");
}

#[test]
fn label_file_round_trip_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = corpus(dir.path());
    let path = dir.path().join("labels.json");
    save_labels(&path, &corpus.truth, "label", "abc").unwrap();
    assert_eq!(load_labels(&path, Some(&corpus.clips)).unwrap(), corpus.truth);

    // an empty map is a valid file with no clips
    save_labels(&path, &CorpusLabels::new(), "label", "abc").unwrap();
    assert!(load_labels(&path, Some(&corpus.clips)).unwrap().is_empty());

    // a sequence with a frame the masklet lacks
    let mut bad = corpus.truth.clone();
    let seq = bad.get_mut("synth_00000").unwrap().get_mut(&0).unwrap();
    let last = *seq.labels.keys().last().unwrap();
    seq.labels.insert(last + 100, osclabel::StateLabel::Actionable);
    save_labels(&path, &bad, "label", "abc").unwrap();
    let msg = load_labels(&path, Some(&corpus.clips)).unwrap_err().to_string();
    assert!(msg.contains("clip synth_00000 track 0"), "{msg}");

    // labels for a clip that is not in the dataset
    let mut stray = corpus.truth.clone();
    let extra = stray["synth_00000"].clone();
    stray.insert("ghost".into(), extra);
    save_labels(&path, &stray, "label", "abc").unwrap();
    assert!(matches!(
        load_labels(&path, Some(&corpus.clips)),
        Err(Error::Load { .. })
    ));
    // without a dataset the same file is structurally fine
    assert_eq!(load_labels(&path, None).unwrap().len(), 4);
}

#[test]
fn threshold_table_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    let mut table = ThresholdTable::default();
    table
        .verbs
        .insert("peel".into(), ThresholdConfig::new(0.4, 0.02).unwrap());
    save_thresholds(&path, &table).unwrap();
    let back = load_thresholds(&path).unwrap();
    assert_eq!(back, table);
    assert_eq!(back.for_verb("peel").tau, 0.4);
    assert_eq!(back.for_verb("chop"), ThresholdConfig::DEFAULT);
}
