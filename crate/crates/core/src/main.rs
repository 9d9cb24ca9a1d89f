use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use osclabel::metrics::SplitFilter;
use osclabel::pipeline::{run_pipeline, PipelineConfig, Stage};
use osclabel::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "osclabel", version)]
#[command(about = "Object-state-change pseudo-labeling, refinement and evaluation")]
struct Cli {
    /// Dataset manifest (defaults to <out>/dataset/manifest.json when present)
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Output directory for all artifacts
    #[arg(long, global = true, env = "OSCLABEL_OUT", default_value = "out")]
    out: PathBuf,

    /// Worker threads (outputs do not depend on this)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Seed for every stochastic stage
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Per-verb threshold table (JSON)
    #[arg(long, global = true)]
    thresholds: Option<PathBuf>,

    /// Restrict every stage to clips of this verb
    #[arg(long, global = true)]
    verb: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known labels
    Synth(SynthArgs),
    /// Pseudo-label every region from its similarity scores
    Label,
    /// Apply causal ordering and ambiguity resolution to a label file
    Refine(RefineArgs),
    /// Score labels against ground-truth masks
    Eval(EvalArgs),
    /// Activity-progress curves and monotonicity / end-state metrics
    Progress(ProgressArgs),
    /// Ground-truth phase durations, areas and progression profiles
    Analyze(AnalyzeArgs),
    /// Per-verb threshold grid search on annotated clips
    Gridsearch(GridArgs),
    /// Run several stages in order
    Run {
        /// Comma-separated stages: synth,gridsearch,label,refine,eval,progress,analyze
        #[arg(long, value_delimiter = ',', required = true)]
        stages: Vec<String>,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        refine: RefineArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        progress: ProgressArgs,
        #[command(flatten)]
        analyze: AnalyzeArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Args, Default)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    clips: u32,
    #[arg(long, default_value_t = 20)]
    frames: u32,
    #[arg(long, default_value_t = 3)]
    masklets: u32,
    #[arg(long, default_value_t = 32)]
    height: u32,
    #[arg(long, default_value_t = 48)]
    width: u32,
    /// Change-point window as fractions of the clip, e.g. 0.2,0.8
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.2, 0.8])]
    window: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    noise_flip: f64,
    #[arg(long, default_value_t = 0.0)]
    ambiguous: f64,
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
}

#[derive(Args, Default)]
struct RefineArgs {
    /// Input label file (defaults to <out>/labels.json)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Also write per-clip refinement counts as CSV
    #[arg(long)]
    report: bool,
}

#[derive(Args, Default)]
struct EvalArgs {
    #[arg(long, default_value = "full", value_parser = ["full", "transition", "seen", "novel"])]
    split: String,
    /// Score one state-agnostic object mask per frame
    #[arg(long)]
    fuse_states: bool,
    #[arg(long)]
    per_verb: bool,
    /// Label proposals from ground truth (upper bound) instead of a label file
    #[arg(long)]
    oracle: bool,
    /// Region overlap fraction required by --oracle
    #[arg(long, default_value_t = 0.5)]
    oracle_overlap: f64,
}

#[derive(Args, Default)]
struct ProgressArgs {
    /// Build curves from annotated masks instead of labels
    #[arg(long)]
    annotations: bool,
}

#[derive(Args, Default)]
struct AnalyzeArgs {
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

#[derive(Args, Default)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.4, 0.5, 0.6, 0.7])]
    tau_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.005, 0.01, 0.02, 0.05])]
    delta_grid: Vec<f64>,
}

impl SynthArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.synth = SynthConfig {
            seed: cfg.seed.unwrap_or(0),
            clips: self.clips,
            frames_per_clip: self.frames,
            masklets_per_clip: self.masklets,
            grid: (self.height, self.width),
            transition_window: (self.window[0], self.window[1]),
            noise_flip_prob: self.noise_flip,
            ambiguous_prob: self.ambiguous,
            score_margin: self.margin,
        };
    }
}

impl RefineArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.labels = self.labels.clone();
        cfg.refine_report = self.report;
    }
}

impl EvalArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        cfg.eval.split = self.split.parse::<SplitFilter>()?;
        cfg.eval.fuse_states = self.fuse_states;
        cfg.eval.per_verb = self.per_verb;
        cfg.eval.oracle = self.oracle;
        cfg.eval.oracle_overlap = self.oracle_overlap;
        Ok(())
    }
}

fn build(cli: &Cli) -> Result<(Vec<Stage>, PipelineConfig)> {
    let mut cfg = PipelineConfig::new(&cli.out);
    cfg.manifest = cli.manifest.clone();
    cfg.jobs = cli.jobs;
    cfg.seed = cli.seed;
    cfg.thresholds = cli.thresholds.clone();
    cfg.verb = cli.verb.clone();

    let stages = match &cli.command {
        Command::Synth(a) => {
            a.apply(&mut cfg);
            vec![Stage::Synth]
        }
        Command::Label => vec![Stage::Label],
        Command::Refine(a) => {
            a.apply(&mut cfg);
            vec![Stage::Refine]
        }
        Command::Eval(a) => {
            a.apply(&mut cfg)?;
            vec![Stage::Eval]
        }
        Command::Progress(a) => {
            cfg.progress_from_annotations = a.annotations;
            vec![Stage::Progress]
        }
        Command::Analyze(a) => {
            cfg.bins = a.bins;
            vec![Stage::Analyze]
        }
        Command::Gridsearch(a) => {
            cfg.tau_grid = a.tau_grid.clone();
            cfg.delta_grid = a.delta_grid.clone();
            vec![Stage::Gridsearch]
        }
        Command::Run {
            stages,
            synth,
            refine,
            eval,
            progress,
            analyze,
            grid,
        } => {
            synth.apply(&mut cfg);
            refine.apply(&mut cfg);
            eval.apply(&mut cfg)?;
            cfg.progress_from_annotations = progress.annotations;
            cfg.bins = analyze.bins;
            cfg.tau_grid = grid.tau_grid.clone();
            cfg.delta_grid = grid.delta_grid.clone();
            stages.iter().map(|s| s.parse::<Stage>()).collect::<Result<_, _>>()?
        }
    };
    Ok((stages, cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(&cli).and_then(|(stages, cfg)| Ok(run_pipeline(&stages, &cfg)?));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
