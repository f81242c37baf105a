//! Subcommands of the `affectkit` binary.

use std::fs;
use std::path::{Path, PathBuf};

use affectkit_core::clip_align::ProviderRegistry;
use affectkit_core::curation::{CuratedIndex, CurationConfig};
use affectkit_core::evaluation::{optimize_thresholds, MetricReport};
use affectkit_core::harness::{
    evaluate_task, generate_fixtures, predict, train_task, CheckpointManifest, FixtureSpec, FrameList, HeadKind,
    Predictions, Resources, RunConfig,
};
use affectkit_core::task::Split;
use affectkit_core::Task;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{load_config, parse_config, resolve_data, DataLayout};
use crate::dataset::{curate_dir, read_index, summary, write_index};
use crate::error::{Error, IoContext, Result};
use crate::fixtures::write_fixtures;
use crate::frames::PngFrames;
use crate::runs::{self, CHECKPOINT_FILE, METRICS_FILE, REPORT_JSON, REPORT_TEXT};

#[derive(Debug, Parser)]
#[command(name = "affectkit", version, about = "Affective behaviour analysis: curation, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse annotation files, drop invalid frames and write an index.
    Curate(CurateArgs),
    /// Train one task head and save the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a curated split.
    Evaluate(EvalArgs),
    /// Search per-unit AU thresholds on validation data and store them.
    OptimizeThresholds(EvalArgs),
    /// Write per-frame predictions for a directory of frames.
    Predict(PredictArgs),
    /// Collect validation scores of all runs into one table.
    Report(ReportArgs),
    /// Write a synthetic dataset with images, annotations and a manifest.
    GenerateFixtures(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub task: Task,
    /// Annotation root, challenge directory or split directory.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Text summary of frame counts before and after filtering.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub va_min: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub va_max: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Task,
    #[arg(long, default_value = "fc")]
    pub head: HeadKind,
    #[arg(long)]
    pub clip: bool,
    /// Dataset root; overrides the config and `AFFECTKIT_DATA`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory receiving `{run}/checkpoint.afk`.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: Split,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Curated index; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of video subdirectories holding numbered PNG frames.
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory, one annotation-format file per video.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub runs: PathBuf,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML fixture specification.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub frames_per_video: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Curate(a) => curate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::OptimizeThresholds(a) => thresholds(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Report(a) => report(a),
        Command::GenerateFixtures(a) => fixtures(a),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, json).at(path)
}

fn print_report(label: &str, r: &MetricReport) {
    print!("{label}: {} {:.4} over {} frames", r.task, r.score, r.frames);
    if let Some(opt) = r.optimized_score() {
        print!(" (optimized thresholds {opt:.4})");
    }
    println!();
}

fn curate(a: CurateArgs) -> Result<()> {
    let config = CurationConfig {
        va_range: (a.va_min, a.va_max),
    };
    let indices = curate_dir(&a.annotations, a.task, &config)?;
    write_index(&indices, &a.out)?;
    let s = summary(&indices)?;
    let text = s.render();
    if let Some(path) = &a.report {
        fs::write(path, &text).at(path)?;
    }
    print!("{text}");
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => load_config(p)?,
        None => parse_config("", Path::new("<defaults>"))?,
    };
    c.task = a.task;
    c.head = a.head;
    c.clip = a.clip;
    if let Some(s) = a.steps {
        c.optimizer.steps = s;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn train(a: TrainArgs) -> Result<()> {
    let config = train_config(&a)?;
    let data = resolve_data(&config, a.data.as_deref())?;
    let train_idx = read_index(&data.train_index, config.task, Split::Train)?;
    let val_idx = read_index(&data.val_index, config.task, Split::Val)?;
    let pretrained = data.pretrained.as_deref().map(checkpoint::load).transpose()?;
    let frames = PngFrames::new(&data.images);
    let providers = ProviderRegistry::default();
    let mut res = Resources::new(&frames, &providers);
    res.pretrained = pretrained.as_ref().map(|m| &m.params);
    println!(
        "training {} on {} frames, validating on {}",
        config.run_name(),
        train_idx.len(),
        val_idx.len()
    );
    let manifest = train_task(&config, &train_idx, &val_idx, &res)?;
    let dir = a.out.join(config.run_name());
    let path = dir.join(CHECKPOINT_FILE);
    checkpoint::save(&manifest, &path)?;
    if let Some(r) = &manifest.report {
        write_json(r, &dir.join(METRICS_FILE))?;
        print_report("best", r);
    }
    println!("step {} of {}; saved {}", manifest.step, manifest.steps_run, path.display());
    Ok(())
}

/// Checkpoint, data layout and the requested split's index.
fn open_eval(a: &EvalArgs) -> Result<(CheckpointManifest, DataLayout, CuratedIndex)> {
    let m = checkpoint::load(&a.checkpoint)?;
    let data = resolve_data(&m.config, a.data.as_deref())?;
    let path = a.index.clone().unwrap_or_else(|| match a.split {
        Split::Train => data.train_index.clone(),
        Split::Val => data.val_index.clone(),
    });
    let index = read_index(&path, m.config.task, a.split)?;
    Ok((m, data, index))
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.with_file_name(name)
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let (m, data, index) = open_eval(&a)?;
    let frames = PngFrames::new(&data.images);
    let providers = ProviderRegistry::default();
    let r = evaluate_task(&m, &index, &Resources::new(&frames, &providers))?;
    write_json(&r, &sibling(&a.checkpoint, &format!("eval_{}.json", a.split)))?;
    print_report(a.split.as_str(), &r);
    Ok(())
}

fn thresholds(a: EvalArgs) -> Result<()> {
    let (mut m, data, index) = open_eval(&a)?;
    if m.config.task != Task::Au {
        return Err(Error::Usage(format!("thresholds only apply to au, not {}", m.config.task)));
    }
    let frames = PngFrames::new(&data.images);
    let providers = ProviderRegistry::default();
    let res = Resources::new(&frames, &providers);
    let Predictions::Au(probs) = predict(&m, &FrameList::from_index(&index), &res)? else {
        unreachable!("au checkpoints predict probabilities")
    };
    let labels: Vec<_> = index
        .videos()
        .iter()
        .flat_map(|(_, fs)| fs.iter().filter_map(|f| f.payload.aus()))
        .collect();
    let t = optimize_thresholds(&probs, &labels, &m.config.threshold_grid)?;
    m.thresholds = Some(t);
    checkpoint::save(&m, &a.checkpoint)?;
    write_json(&t, &sibling(&a.checkpoint, "thresholds.json"))?;
    let r = evaluate_task(&m, &index, &res)?;
    print_report(a.split.as_str(), &r);
    println!(
        "thresholds: {}",
        t.0.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(",")
    );
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let m = checkpoint::load(&a.checkpoint)?;
    let (root, videos) = runs::scan_images(&a.images)?;
    let frames = PngFrames::new(root);
    let providers = ProviderRegistry::default();
    let list = FrameList::from_keys(&videos);
    let preds = predict(&m, &list, &Resources::new(&frames, &providers))?;
    let lines = runs::prediction_lines(&preds, &m.thresholds.unwrap_or_default());
    runs::write_predictions(&a.out, m.config.task, &videos, &lines)?;
    println!("wrote {} frames for {} videos to {}", lines.len(), videos.len(), a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let table = runs::comparison(&a.runs)?;
    let text = table.render();
    fs::write(a.runs.join(REPORT_TEXT), &text).at(a.runs.join(REPORT_TEXT))?;
    write_json(&table, &a.runs.join(REPORT_JSON))?;
    print!("{text}");
    Ok(())
}

fn fixtures(a: FixtureArgs) -> Result<()> {
    let mut spec: FixtureSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).at(p)?;
            toml::from_str(&text).map_err(|source| Error::Toml { path: p.clone(), source })?
        }
        None => FixtureSpec::default(),
    };
    if let Some(n) = a.frames_per_video {
        spec.frames_per_video = n;
    }
    if let Some(s) = a.image_size {
        spec.image_size = s;
    }
    let set = generate_fixtures(a.seed, &spec)?;
    write_fixtures(&set, &a.out)?;
    println!("wrote {} videos to {}", set.videos.len(), a.out.display());
    Ok(())
}
