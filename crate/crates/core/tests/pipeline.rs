mod common;

use osclabel::labeling::{candidate_grid, grid_search_thresholds, ThresholdConfig};
use osclabel::metrics::EvalConfig;
use osclabel::model::{GroundTruthFrame, Masklet};
use osclabel::pipeline::{run_pipeline, PipelineConfig, Stage};
use osclabel::synth::{generate_corpus, perturb_scores, SynthConfig};
use osclabel::{Error, PixelMask};

use common::*;

/// Dev set where the real objects sit just above tau = 0.5 with a gap just
/// above delta = 0.01, next to a background distractor (sum 0.45) and a
/// near-tie distractor (gap 0.007) that is not in the ground truth.
fn planted_clip() -> osclabel::model::ClipRecord {
    let (h, w) = (8, 12);
    let act = PixelMask::rect(h, w, 0, 0, 4, 4).unwrap();
    let trf = PixelMask::rect(h, w, 0, 4, 4, 4).unwrap();
    let bg = PixelMask::rect(h, w, 4, 0, 4, 6).unwrap();
    let tie = PixelMask::rect(h, w, 4, 6, 4, 6).unwrap();
    let masklets = vec![
        Masklet::new(0, vec![region(0, act.clone(), 0.2825, 0.2675)]).unwrap(),
        Masklet::new(1, vec![region(0, trf.clone(), 0.2675, 0.2825)]).unwrap(),
        Masklet::new(2, vec![region(0, bg, 0.175, 0.275)]).unwrap(),
        Masklet::new(3, vec![region(0, tie, 0.3035, 0.2965)]).unwrap(),
    ];
    let gt = GroundTruthFrame::new(0, act, trf, false).unwrap();
    single_frame_clip("dev", "peel", masklets, Some(vec![gt]))
}

#[test]
fn grid_search_finds_planted_optimum() {
    let clips = [planted_clip()];
    let grid = candidate_grid(&[0.3, 0.5, 0.7], &[0.005, 0.01, 0.02]).unwrap();
    let result = grid_search_thresholds(&grid, &clips, &EvalConfig::default()).unwrap();
    assert_eq!(result.best["peel"], ThresholdConfig::new(0.5, 0.01).unwrap());
    let top = result.grid.iter().filter(|c| c.miou == Some(1.0)).count();
    assert_eq!(top, 1, "{:?}", result.grid);
}

#[test]
fn grid_search_rejects_empty_candidates() {
    let err = grid_search_thresholds(&[], &[planted_clip()], &EvalConfig::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyCandidates));
}

#[test]
fn perturbation_flip_rate() {
    let corpus = generate_corpus(&SynthConfig {
        clips: 170,
        frames_per_clip: 20,
        masklets_per_clip: 3,
        ..Default::default()
    })
    .unwrap();
    let (_, stats) = perturb_scores(&corpus.clips, 0.2, 0.0, 99).unwrap();
    assert!(stats.regions >= 10_000, "{}", stats.regions);
    let rate = stats.flipped as f64 / stats.regions as f64;
    assert!((rate - 0.2).abs() <= 0.03, "flip rate {rate}");
    assert_eq!(stats.collapsed, 0);
}

#[test]
fn refine_without_labels_names_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_pipeline(&[Stage::Refine], &PipelineConfig::new(dir.path())).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("labels.json") && msg.contains("refine"), "{msg}");
}

#[test]
fn refinement_improves_noisy_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(dir.path());
    cfg.synth.clips = 30;
    cfg.synth.noise_flip_prob = 0.2;
    cfg.synth.ambiguous_prob = 0.1;
    cfg.seed = Some(3);
    let raw = run_pipeline(&[Stage::Synth, Stage::Label, Stage::Eval], &cfg).unwrap();
    let refined = run_pipeline(&[Stage::Refine, Stage::Eval], &cfg).unwrap();
    let (a, b) = (raw.eval.unwrap().miou.unwrap(), refined.eval.unwrap().miou.unwrap());
    assert!(b > a, "raw {a} refined {b}");
}

#[test]
fn oracle_upper_bound_on_clean_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(dir.path());
    cfg.eval.oracle = true;
    cfg.eval.per_verb = true;
    let out = run_pipeline(&[Stage::Synth, Stage::Eval], &cfg).unwrap();
    let eval = out.eval.unwrap();
    assert_eq!(eval.miou, Some(1.0));
    assert_eq!(eval.per_verb.len(), 4);
}
