//! Stage orchestration behind the CLI.
//!
//! Stages always run in the order synth, gridsearch, label, refine, eval,
//! progress, analyze, whatever order they were requested in. Each stage
//! writes fixed-name artifacts under the output directory; later stages pick
//! up what earlier ones produced in the same run, and otherwise fall back to
//! existing files there.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::analytics;
use crate::dynamics::{self, RefinementReport};
use crate::error::{Error, Result};
use crate::io::{self, csv_header, DatasetManifest, ScoreConvention};
use crate::labeling::{self, ThresholdTable};
use crate::mask::PixelMask;
use crate::metrics::{self, CompositeFrame, EvalConfig, EvalResult, SplitFilter};
use crate::model::{ClipRecord, CorpusLabels};
use crate::progress::{self, ProgressReport};
use crate::synth::{self, SynthConfig};

pub const DATASET_DIR: &str = "dataset";
pub const TRUTH_FILE: &str = "truth.json";
pub const LABELS_FILE: &str = "labels.json";
pub const REFINED_FILE: &str = "refined.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Gridsearch,
    Label,
    Refine,
    Eval,
    Progress,
    Analyze,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Gridsearch => "gridsearch",
            Stage::Label => "label",
            Stage::Refine => "refine",
            Stage::Eval => "eval",
            Stage::Progress => "progress",
            Stage::Analyze => "analyze",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "synth" => Stage::Synth,
            "gridsearch" => Stage::Gridsearch,
            "label" => Stage::Label,
            "refine" => Stage::Refine,
            "eval" => Stage::Eval,
            "progress" => Stage::Progress,
            "analyze" => Stage::Analyze,
            other => return Err(Error::invalid("stage", other.to_string())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalOptions {
    pub split: SplitFilter,
    pub fuse_states: bool,
    pub per_verb: bool,
    /// Score ground-truth-derived proposal labels instead of a label file.
    pub oracle: bool,
    pub oracle_overlap: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: SplitFilter::Full,
            fuse_states: false,
            per_verb: false,
            oracle: false,
            oracle_overlap: metrics::ORACLE_OVERLAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub out: PathBuf,
    pub manifest: Option<PathBuf>,
    /// Worker threads; `None` uses rayon's default. Never affects outputs.
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub thresholds: Option<PathBuf>,
    pub verb: Option<String>,
    /// Input label file for refine/eval/progress.
    pub labels: Option<PathBuf>,
    pub synth: SynthConfig,
    pub eval: EvalOptions,
    pub refine_report: bool,
    /// Progress curves from ground-truth masks rather than predicted labels.
    pub progress_from_annotations: bool,
    pub bins: usize,
    pub tau_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
}

impl PipelineConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            out: out.into(),
            manifest: None,
            jobs: None,
            seed: None,
            thresholds: None,
            verb: None,
            labels: None,
            synth: SynthConfig::default(),
            eval: EvalOptions::default(),
            refine_report: false,
            progress_from_annotations: false,
            bins: 10,
            tau_grid: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            delta_grid: vec![0.0, 0.005, 0.01, 0.02, 0.05],
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOutcome {
    pub artifacts: Vec<PathBuf>,
    pub eval: Option<EvalResult>,
    pub progress: Option<ProgressReport>,
    pub refine: Option<RefinementReport>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

#[derive(Serialize)]
struct HashInput<'a> {
    stages: &'a [Stage],
    seed: Option<u64>,
    verb: &'a Option<String>,
    thresholds: &'a ThresholdTable,
    synth: Option<&'a SynthConfig>,
    eval: &'a EvalOptions,
    bins: usize,
    tau_grid: &'a [f64],
    delta_grid: &'a [f64],
    progress_from_annotations: bool,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    stages: Vec<Stage>,
    hash: String,
    thresholds: ThresholdTable,
    clips: Option<Vec<ClipRecord>>,
    labels_path: Option<PathBuf>,
    outcome: PipelineOutcome,
}

/// Runs the requested stages with all work inside a pool of `cfg.jobs` threads.
pub fn run_pipeline(stages: &[Stage], cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::invalid("jobs", e.to_string()))?;
    pool.install(|| run_stages(stages, cfg))
}

fn run_stages(stages: &[Stage], cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let mut synth_cfg = cfg.synth.clone();
    if let Some(seed) = cfg.seed {
        synth_cfg.seed = seed;
    }
    let mut run = Run {
        cfg,
        stages: stages.clone(),
        hash: String::new(),
        thresholds: ThresholdTable::default(),
        clips: None,
        labels_path: cfg.labels.clone(),
        outcome: PipelineOutcome::default(),
    };

    run.resolve_thresholds()?;
    run.rehash(&synth_cfg);
    for stage in stages {
        match stage {
            Stage::Synth => run.synth(&synth_cfg)?,
            Stage::Gridsearch => run.gridsearch()?,
            Stage::Label => run.label()?,
            Stage::Refine => run.refine()?,
            Stage::Eval => run.eval()?,
            Stage::Progress => run.progress()?,
            Stage::Analyze => run.analyze()?,
        }
    }
    Ok(run.outcome)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

impl Run<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn rehash(&mut self, synth_cfg: &SynthConfig) {
        self.hash = io::config_hash(&HashInput {
            stages: &self.stages,
            seed: self.cfg.seed,
            verb: &self.cfg.verb,
            thresholds: &self.thresholds,
            synth: self.stages.contains(&Stage::Synth).then_some(synth_cfg),
            eval: &self.cfg.eval,
            bins: self.cfg.bins,
            tau_grid: &self.cfg.tau_grid,
            delta_grid: &self.cfg.delta_grid,
            progress_from_annotations: self.cfg.progress_from_annotations,
        });
    }

    fn manifest_path(&self, stage: Stage) -> Result<PathBuf> {
        if let Some(p) = &self.cfg.manifest {
            return Ok(p.clone());
        }
        let generated = self.out(DATASET_DIR).join("manifest.json");
        if generated.is_file() {
            Ok(generated)
        } else {
            Err(Error::MissingArtifact(generated, stage.name()))
        }
    }

    /// Explicit file, else the manifest's table, else the built-in default.
    /// A manifest that this run will generate has no table yet.
    fn resolve_thresholds(&mut self) -> Result<()> {
        self.thresholds = match &self.cfg.thresholds {
            Some(p) => io::load_thresholds(p)?,
            None if self.cfg.manifest.is_none() && self.stages.contains(&Stage::Synth) => ThresholdTable::default(),
            None => match self.manifest_path(Stage::Label) {
                Ok(p) => self.load_clips(&p)?.unwrap_or_default(),
                Err(_) => ThresholdTable::default(),
            },
        };
        Ok(())
    }

    /// Loads and caches the corpus, returning the manifest's threshold table.
    fn load_clips(&mut self, manifest: &std::path::Path) -> Result<Option<ThresholdTable>> {
        let dataset = io::load_dataset(manifest)?;
        let mut clips = dataset.clips;
        if let Some(v) = &self.cfg.verb {
            clips.retain(|c| &c.osc.verb == v);
        }
        self.clips = Some(clips);
        Ok(dataset.thresholds)
    }

    fn clips(&mut self, stage: Stage) -> Result<&[ClipRecord]> {
        if self.clips.is_none() {
            let path = self.manifest_path(stage)?;
            self.load_clips(&path)?;
        }
        Ok(self.clips.as_deref().unwrap_or_default())
    }

    fn record(&mut self, path: PathBuf) {
        self.outcome.artifacts.push(path);
    }

    fn synth(&mut self, synth_cfg: &SynthConfig) -> Result<()> {
        let corpus = synth::generate_corpus(synth_cfg)?;
        let manifest = DatasetManifest {
            format_version: io::FORMAT_VERSION,
            score_convention: ScoreConvention::RawDot,
            embedding_dim: None,
            clips: Vec::new(),
            thresholds_file: None,
            splits_file: None,
            config_hash: Some(self.hash.clone()),
            metadata: BTreeMap::from([
                ("rng".to_string(), synth::RNG_ALGORITHM.to_string()),
                ("seed".to_string(), synth_cfg.seed.to_string()),
            ]),
        };
        let manifest_path = io::save_dataset(&self.out(DATASET_DIR), &corpus.clips, manifest)?;
        let truth = self.out(TRUTH_FILE);
        io::save_labels(&truth, &corpus.truth, "truth", &self.hash)?;
        self.outcome.summary.push(format!(
            "synth: {} clips written to {}",
            corpus.clips.len(),
            manifest_path.display()
        ));
        self.record(manifest_path);
        self.record(truth);
        self.clips = None;
        Ok(())
    }

    fn gridsearch(&mut self) -> Result<()> {
        let candidates = labeling::candidate_grid(&self.cfg.tau_grid, &self.cfg.delta_grid)?;
        let eval = EvalConfig {
            split: self.cfg.eval.split,
            fuse_states: self.cfg.eval.fuse_states,
        };
        let result = labeling::grid_search_thresholds(&candidates, self.clips(Stage::Gridsearch)?, &eval)?;

        let mut csv = csv_header(&self.hash, &[("split", format!("{:?}", eval.split).to_lowercase())]);
        csv.push_str("verb,tau,delta,miou\n");
        for cell in &result.grid {
            let _ = writeln!(csv, "{},{},{},{}", cell.verb, cell.tau, cell.delta, fmt_opt(cell.miou));
        }
        let grid_path = self.out("gridsearch.csv");
        io::write_text(&grid_path, &csv)?;
        let mut table = result.to_table();
        table.default = self.thresholds.default;
        let table_path = self.out(THRESHOLDS_FILE);
        io::save_thresholds(&table_path, &table)?;
        for (verb, best) in &result.best {
            self.outcome
                .summary
                .push(format!("gridsearch: {verb} -> tau={} delta={}", best.tau, best.delta));
        }
        self.thresholds = table;
        self.record(grid_path);
        self.record(table_path);
        Ok(())
    }

    fn label(&mut self) -> Result<()> {
        let table = self.thresholds.clone();
        let labels = labeling::pseudo_label_corpus(self.clips(Stage::Label)?, &table)?;
        let path = self.out(LABELS_FILE);
        io::save_labels(&path, &labels, "label", &self.hash)?;
        self.outcome
            .summary
            .push(format!("label: {} clips labeled", labels.len()));
        self.labels_path = Some(path.clone());
        self.record(path);
        Ok(())
    }

    fn input_labels(&mut self, stage: Stage, prefer_refined: bool) -> Result<CorpusLabels> {
        let path = match &self.labels_path {
            Some(p) => p.clone(),
            None => {
                let refined = self.out(REFINED_FILE);
                if prefer_refined && refined.is_file() {
                    refined
                } else {
                    self.out(LABELS_FILE)
                }
            }
        };
        if !path.is_file() {
            return Err(Error::MissingArtifact(path, stage.name()));
        }
        let clips = self.clips(stage)?.to_vec();
        let mut labels = io::load_labels(&path, Some(&clips))?;
        if self.cfg.verb.is_some() {
            labels.retain(|id, _| clips.iter().any(|c| &c.clip_id == id));
        }
        Ok(labels)
    }

    fn refine(&mut self) -> Result<()> {
        let labels = self.input_labels(Stage::Refine, false)?;
        let mut refined = CorpusLabels::new();
        let mut rows = Vec::new();
        let mut total = RefinementReport::default();
        for (clip_id, clip_labels) in &labels {
            let (out, report) = dynamics::refine_clip(clip_labels);
            total += report;
            rows.push((clip_id.clone(), report));
            refined.insert(clip_id.clone(), out);
        }
        let path = self.out(REFINED_FILE);
        io::save_labels(&path, &refined, "refine", &self.hash)?;
        self.record(path.clone());
        if self.cfg.refine_report {
            let mut csv = csv_header(&self.hash, &[]);
            csv.push_str("clip_id,flips_causal,resolved_ambiguous,iterations\n");
            for (id, r) in &rows {
                let _ = writeln!(csv, "{id},{},{},{}", r.flips_causal, r.resolved_ambiguous, r.iterations);
            }
            let report_path = self.out("refine_report.csv");
            io::write_text(&report_path, &csv)?;
            self.record(report_path);
        }
        self.outcome.summary.push(format!(
            "refine: {} causal flips, {} ambiguous resolved",
            total.flips_causal, total.resolved_ambiguous
        ));
        self.outcome.refine = Some(total);
        self.labels_path = Some(path);
        Ok(())
    }

    fn predictions(&mut self, stage: Stage) -> Result<(BTreeMap<String, Vec<CompositeFrame>>, &'static str)> {
        if self.cfg.eval.oracle {
            let theta = self.cfg.eval.oracle_overlap;
            let clips = self.clips(stage)?;
            let labels = clips
                .iter()
                .map(|c| Ok((c.clip_id.clone(), metrics::oracle_labels(c, theta)?)))
                .collect::<Result<CorpusLabels>>()?;
            return Ok((metrics::composite_corpus(clips, &labels)?, "oracle"));
        }
        let labels = self.input_labels(stage, true)?;
        let clips = self.clips(stage)?;
        Ok((metrics::composite_corpus(clips, &labels)?, "labels"))
    }

    fn eval(&mut self) -> Result<()> {
        let (preds, source) = self.predictions(Stage::Eval)?;
        let opts = self.cfg.eval.clone();
        let cfg = EvalConfig {
            split: opts.split,
            fuse_states: opts.fuse_states,
        };
        let result = metrics::evaluate(self.clips(Stage::Eval)?, &preds, &cfg)?;

        let split = format!("{:?}", opts.split).to_lowercase();
        let mut csv = csv_header(
            &self.hash,
            &[
                ("split", split.clone()),
                ("fused", opts.fuse_states.to_string()),
                ("source", source.to_string()),
                ("undefined_iou", metrics::UNDEFINED_IOU_CONVENTION.to_string()),
                ("pooling", metrics::POOLING_CONVENTION.to_string()),
            ],
        );
        csv.push_str("scope,miou,miou_act,miou_trf,frames_evaluated,frames_ignored\n");
        let _ = writeln!(
            csv,
            "all,{},{},{},{},{}",
            fmt_opt(result.miou),
            fmt_opt(result.miou_act),
            fmt_opt(result.miou_trf),
            result.frames_evaluated,
            result.frames_ignored
        );
        if opts.per_verb {
            for (verb, s) in &result.per_verb {
                let _ = writeln!(
                    csv,
                    "verb:{verb},{},{},{},{},{}",
                    fmt_opt(s.miou),
                    fmt_opt(s.miou_act),
                    fmt_opt(s.miou_trf),
                    s.frames_evaluated,
                    s.frames_ignored
                );
            }
            let _ = writeln!(csv, "verb_mean,{},,,,", fmt_opt(result.verb_mean));
        }
        let csv_path = self.out("eval.csv");
        io::write_text(&csv_path, &csv)?;

        let mut text = String::new();
        let _ = writeln!(text, "split: {split}  fused: {}  source: {source}", opts.fuse_states);
        let _ = writeln!(
            text,
            "mIoU {}  (act {}, trf {})  frames evaluated {}, ignored {}",
            fmt_opt(result.miou),
            fmt_opt(result.miou_act),
            fmt_opt(result.miou_trf),
            result.frames_evaluated,
            result.frames_ignored
        );
        if opts.per_verb {
            for (verb, s) in &result.per_verb {
                let _ = writeln!(text, "  {verb:<12} mIoU {}", fmt_opt(s.miou));
            }
            let _ = writeln!(text, "  {:<12} mIoU {}", "mean", fmt_opt(result.verb_mean));
        }
        let summary_path = self.out("eval_summary.txt");
        io::write_text(&summary_path, &text)?;
        self.outcome.summary.extend(text.lines().map(|l| format!("eval: {l}")));
        self.outcome.eval = Some(result);
        self.record(csv_path);
        self.record(summary_path);
        Ok(())
    }

    fn progress(&mut self) -> Result<()> {
        let preds = if self.cfg.progress_from_annotations {
            annotation_frames(self.clips(Stage::Progress)?)?
        } else {
            self.predictions(Stage::Progress)?.0
        };
        let report = progress::progress_report(self.clips(Stage::Progress)?, &preds)?;

        let mut curves = csv_header(&self.hash, &[]);
        curves.push_str("clip_id,frame,value,phase\n");
        for (id, curve) in &report.curves {
            for (t, (v, p)) in curve.values.iter().zip(&curve.phases).enumerate() {
                let value = v.map_or_else(|| "absent".to_string(), |x| x.to_string());
                let _ = writeln!(curves, "{id},{t},{value},{}", format!("{p:?}").to_lowercase());
            }
        }
        let mut table = csv_header(
            &self.hash,
            &[
                ("tau_ties", progress::TAU_TIE_CONVENTION.to_string()),
                ("end_l2", progress::END_L2_CONVENTION.to_string()),
                (
                    "source",
                    if self.cfg.progress_from_annotations {
                        "annotations"
                    } else {
                        "labels"
                    }
                    .to_string(),
                ),
            ],
        );
        table.push_str("clip_id,tau,end_sigma,end_l2\n");
        for (id, m) in &report.per_clip {
            let _ = writeln!(
                table,
                "{id},{},{},{}",
                fmt_opt(m.tau),
                fmt_opt(m.end_sigma),
                fmt_opt(m.end_l2)
            );
        }
        let a = report.aggregate;
        let _ = writeln!(
            table,
            "aggregate,{},{},{}",
            fmt_opt(a.tau),
            fmt_opt(a.end_sigma),
            fmt_opt(a.end_l2)
        );

        let curves_path = self.out("progress_curves.csv");
        let table_path = self.out("progress_metrics.csv");
        io::write_text(&curves_path, &curves)?;
        io::write_text(&table_path, &table)?;
        self.outcome.summary.push(format!(
            "progress: tau {}  end_sigma {}  end_l2 {}  ({} clips undefined)",
            fmt_opt(a.tau),
            fmt_opt(a.end_sigma),
            fmt_opt(a.end_l2),
            report.undefined.len()
        ));
        self.outcome.progress = Some(report);
        self.record(curves_path);
        self.record(table_path);
        Ok(())
    }

    fn analyze(&mut self) -> Result<()> {
        let bins = self.cfg.bins.max(1);
        let hash = self.hash.clone();
        let clips = self.clips(Stage::Analyze)?;

        let mut durations = csv_header(&hash, &[]);
        durations.push_str("clip_id,verb,frames,act_duration,trf_duration,overlap\n");
        let mut sorted: Vec<&ClipRecord> = clips.iter().collect();
        sorted.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        for c in sorted {
            let d = analytics::phase_durations(c);
            let _ = writeln!(
                durations,
                "{},{},{},{},{},{}",
                c.clip_id, c.osc.verb, c.frame_count, d.act, d.trf, d.overlap
            );
        }

        let mut areas = csv_header(&hash, &[("statistic", "population".to_string())]);
        areas.push_str("verb,class,mean,std,count\n");
        for (verb, s) in analytics::area_stats(clips) {
            for (class, stat) in [("actionable", s.act), ("transformed", s.trf)] {
                if let Some(st) = stat {
                    let _ = writeln!(areas, "{verb},{class},{},{},{}", st.mean, st.std, st.count);
                }
            }
        }

        let mut profile = csv_header(&hash, &[("bins", bins.to_string())]);
        profile.push_str("verb,bin,t_start,t_end,act_mean,act_std,trf_mean,trf_std,clips\n");
        for (verb, rows) in analytics::progression_profile(clips, bins) {
            for (b, row) in rows.iter().enumerate() {
                let (Some(a), Some(t)) = (row.act, row.trf) else {
                    continue;
                };
                let _ = writeln!(
                    profile,
                    "{verb},{b},{},{},{},{},{},{},{}",
                    b as f64 / bins as f64,
                    (b + 1) as f64 / bins as f64,
                    a.mean,
                    a.std,
                    t.mean,
                    t.std,
                    a.count
                );
            }
        }

        for (name, body) in [
            ("phase_durations.csv", durations),
            ("area_stats.csv", areas),
            ("progression_profile.csv", profile),
        ] {
            let path = self.out(name);
            io::write_text(&path, &body)?;
            self.record(path);
        }
        self.outcome.summary.push(format!("analyze: {bins} bins"));
        Ok(())
    }
}

/// Ground-truth masks as per-frame predictions.
pub fn annotation_frames(clips: &[ClipRecord]) -> Result<BTreeMap<String, Vec<CompositeFrame>>> {
    let mut out = BTreeMap::new();
    for clip in clips {
        let Some(gt) = &clip.ground_truth else { continue };
        let Some((h, w)) = clip.grid() else { continue };
        let empty = PixelMask::empty(h, w)?;
        let mut frames = vec![
            CompositeFrame {
                act: empty.clone(),
                trf: empty.clone(),
            };
            clip.frame_count as usize
        ];
        for g in gt {
            frames[g.frame_index as usize] = CompositeFrame {
                act: g.actionable.clone(),
                trf: g.transformed.clone(),
            };
        }
        out.insert(clip.clip_id.clone(), frames);
    }
    Ok(out)
}
