use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use semnerf::data::{generate_synthetic, load_dataset, split_train_test, write_dataset, Dataset, SceneSpec, VOID};
use semnerf::experiment::{
    corrupted_training_labels, evaluate, evaluate_checkpoint, load_for, report, run_experiment, split_for,
    OracleSegmenter, Preset, Profile, RunConfig,
};
use semnerf::render::Pose;
use semnerf::train::{render_image, Checkpoint};
use semnerf::{Error, Result};

/// Semantic-only neural fields: synthesize, train, render, evaluate.
///
/// Exit status: 0 success, 2 configuration, 3 data or checkpoint, 4 numeric.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene spec into a labelled dataset.
    Synth(SynthArgs),
    /// Train a coarse/fine pair under an experiment preset.
    Train(TrainArgs),
    /// Render a label map from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Write a copy of a dataset with its training frames corrupted.
    Corrupt(CorruptArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec JSON; the bundled room when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// NAME[:PARAM], e.g. synthesis, noise:0.5, sr-sparse:8.
    #[arg(long)]
    preset: Option<String>,
    /// paper, desk or quick (default desk).
    #[arg(long)]
    profile: Option<String>,
    /// Resolved run config JSON; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Recorded in the run config; results are reproducible for a fixed seed.
    #[arg(long)]
    deterministic: bool,
    /// Allow preset parameters outside the published set.
    #[arg(long = "unsafe")]
    allow_unsafe: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Dataset frame whose pose to render.
    #[arg(long, conflicts_with = "pose", required_unless_present = "pose")]
    frame: Option<usize>,
    /// Camera-to-world 4×4 row-major matrix: a JSON array or a file holding one.
    #[arg(long)]
    pose: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write a palette-mapped preview next to the label PNG.
    #[arg(long)]
    colorize: bool,
    #[arg(long, default_value_t = 1024)]
    chunk: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "oracle_stub")]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// test, train or all.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    chunk: usize,
    /// Score the dataset's own labels instead of a checkpoint.
    #[arg(long, hide = true)]
    oracle_stub: bool,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    data: PathBuf,
    /// MODE:PARAM, using the preset names.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "unsafe")]
    allow_unsafe: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let json = cli.json;
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Corrupt(a) => corrupt(a),
    };
    match result {
        Ok(summary) => {
            if json {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn census(dataset: &Dataset) -> Vec<u64> {
    let mut counts = vec![0u64; dataset.num_classes()];
    for img in &dataset.images {
        for (c, n) in img.census(dataset.num_classes()).into_iter().enumerate() {
            counts[c] += n as u64;
        }
    }
    counts
}

fn synth(a: SynthArgs) -> Result<serde_json::Value> {
    let spec = match &a.spec {
        Some(p) => SceneSpec::load(p)?,
        None => SceneSpec::bundled(),
    };
    generate_synthetic(&spec, a.seed, &a.out)?;
    let dataset = load_dataset(&a.out, None)?;
    let counts = census(&dataset);
    eprintln!(
        "wrote {} frames of {}×{} with {} classes to {}",
        dataset.len(),
        dataset.intrinsics.width,
        dataset.intrinsics.height,
        dataset.num_classes(),
        a.out.display()
    );
    for (c, n) in counts.iter().enumerate() {
        eprintln!("  class {c:>3}: {n} px");
    }
    Ok(json!({
        "frames": dataset.len(),
        "width": dataset.intrinsics.width,
        "height": dataset.intrinsics.height,
        "classes": dataset.num_classes(),
        "census": counts,
    }))
}

fn resolve_config(a: &TrainArgs, dataset: &Dataset) -> Result<RunConfig> {
    let mut config = match (&a.config, &a.profile) {
        (Some(_), Some(_)) => return Err(Error::Config("pass either --config or --profile".into())),
        (Some(path), None) => serde_json::from_str::<RunConfig>(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        (None, profile) => {
            let profile: Profile = profile.as_deref().unwrap_or("desk").parse()?;
            let mut config = RunConfig::new(profile, Preset::SYNTHESIS, dataset.num_classes());
            config.fit_to(dataset);
            config
        }
    };
    config.allow_unsafe |= a.allow_unsafe;
    config.deterministic |= a.deterministic;
    if let Some(p) = &a.preset {
        config.preset = Preset::parse(p, config.allow_unsafe)?;
    }
    if let Some(n) = a.iters {
        config.train.iterations = n;
    }
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    if let Some(lr) = a.lr {
        config.train.learning_rate = lr;
    }
    if let Some(b) = a.batch {
        config.train.ray_batch = b;
    }
    if config.field.num_classes != dataset.num_classes() {
        return Err(Error::Config(format!(
            "config has {} classes, dataset {}",
            config.field.num_classes,
            dataset.num_classes()
        )));
    }
    config.validate()?;
    Ok(config)
}

fn train(a: TrainArgs) -> Result<serde_json::Value> {
    let probe = load_dataset(&a.data, None)?;
    let config = resolve_config(&a, &probe)?;
    let dataset = load_for(&config, &a.data)?;
    let summary = run_experiment(&config, &dataset, &a.out)?;
    let s = &summary.report.scores;
    eprintln!(
        "{}: test mIoU {:.4}, total acc {:.4}, avg acc {:.4}",
        config.preset, s.miou, s.total_acc, s.avg_acc
    );
    Ok(json!({
        "run_dir": summary.run_dir,
        "checkpoint": summary.checkpoint,
        "miou": s.miou,
        "total_acc": s.total_acc,
        "avg_acc": s.avg_acc,
        "final_loss": summary.final_loss,
    }))
}

/// Dataset at the resolution the checkpoint was trained at.
fn dataset_for(ckpt: &Checkpoint, data: &Path) -> Result<Dataset> {
    let dim = |k: &str| ckpt.metadata.get(k).and_then(|v| v.parse::<usize>().ok());
    let resize = dim("width").zip(dim("height"));
    load_dataset(data, resize)
}

fn parse_pose(arg: &str) -> Result<Pose> {
    let text = if Path::new(arg).is_file() {
        std::fs::read_to_string(arg)?
    } else {
        arg.to_string()
    };
    let values: Vec<f64> = serde_json::from_str(&text).map_err(|e| Error::Config(format!("pose: {e}")))?;
    Pose::from_row_major(&values).map_err(|e| Error::Config(format!("pose: {e}")))
}

fn render(a: RenderArgs) -> Result<serde_json::Value> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let dataset = dataset_for(&ckpt, &a.data)?;
    let pose = match (a.frame, &a.pose) {
        (Some(f), _) => dataset
            .poses
            .get(f)
            .cloned()
            .ok_or_else(|| Error::Config(format!("frame {f} not in dataset ({} frames)", dataset.len())))?,
        (None, Some(p)) => parse_pose(p)?,
        (None, None) => unreachable!("clap requires --frame or --pose"),
    };
    let img = render_image(
        &ckpt.coarse,
        &ckpt.fine,
        &dataset.intrinsics,
        &pose,
        dataset.bounds(),
        ckpt.train_config.n_coarse,
        ckpt.train_config.n_fine,
        a.chunk,
    )?;
    img.labels.save_png(&a.out)?;
    let mut written = vec![a.out.clone()];
    if a.colorize {
        let preview = a.out.with_extension("color.png");
        img.labels.colorize(&dataset.palette()).save(&preview)?;
        written.push(preview);
    }
    eprintln!("wrote {}", a.out.display());
    Ok(json!({"width": img.labels.width(), "height": img.labels.height(), "files": written}))
}

fn eval_frames(split: &str, n: usize) -> Result<Vec<usize>> {
    let (train, test) = split_train_test(n)?;
    match split {
        "test" => Ok(test),
        "train" => Ok(train),
        "all" => Ok((0..n).collect()),
        other => Err(Error::Config(format!("unknown split {other:?} (test, train, all)"))),
    }
}

fn eval(a: EvalArgs) -> Result<serde_json::Value> {
    let report = if a.oracle_stub {
        let dataset = load_dataset(&a.data, None)?;
        let frames = eval_frames(&a.split, dataset.len())?;
        let (cm, _) = evaluate(&OracleSegmenter { dataset: &dataset }, &dataset, &frames)?;
        let meta = [("segmenter".to_string(), "oracle".to_string())].into();
        report(&cm, &a.split, &frames, meta)?
    } else {
        let path = a.ckpt.as_ref().expect("clap requires --ckpt");
        let ckpt = Checkpoint::load(path)?;
        let dataset = dataset_for(&ckpt, &a.data)?;
        let frames = eval_frames(&a.split, dataset.len())?;
        let mut r = evaluate_checkpoint(&ckpt, &dataset, &frames, a.chunk)?.0;
        r.split = a.split.clone();
        r
    };
    if let Some(out) = &a.out {
        report.write(out)?;
    }
    let s = &report.scores;
    eprintln!(
        "{} split: mIoU {:.4}, total acc {:.4}, avg acc {:.4} over {} px",
        a.split, s.miou, s.total_acc, s.avg_acc, report.pixels
    );
    Ok(serde_json::to_value(&report)?)
}

fn corrupt(a: CorruptArgs) -> Result<serde_json::Value> {
    let preset = Preset::parse(&a.mode, a.allow_unsafe)?;
    let dataset = load_dataset(&a.data, None)?;
    let split = split_for(&preset, dataset.len(), a.seed)?;
    let (all_train, _) = split_train_test(dataset.len())?;
    let corrupted = corrupted_training_labels(&dataset, &preset, &split, a.seed)?;
    let mut images = dataset.images.clone();
    // Training frames dropped by a keyframe preset carry no labels at all.
    for &f in &all_train {
        images[f] = semnerf::data::SemanticImage::filled(dataset.intrinsics.width, dataset.intrinsics.height, VOID);
    }
    let mut changed = 0usize;
    for (&f, img) in split.train.iter().zip(corrupted) {
        changed += img
            .labels()
            .iter()
            .zip(dataset.images[f].labels())
            .filter(|(a, b)| a != b)
            .count();
        images[f] = img;
    }
    write_dataset(&a.out, &dataset.manifest, &dataset.poses, &images)?;
    eprintln!(
        "{preset}: corrupted {} training frames ({changed} px changed) into {}",
        split.train.len(),
        a.out.display()
    );
    Ok(json!({
        "mode": preset.to_string(),
        "train_frames": split.train,
        "changed_pixels": changed,
        "non_void": images.iter().map(|i| i.non_void_count()).collect::<Vec<_>>(),
    }))
}
