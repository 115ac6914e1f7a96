//! Experiment presets, run directories and test-split evaluation.
//!
//! A run loads a dataset at the profile's resolution, splits it, corrupts
//! only the training frames according to the preset, trains, and scores
//! rendered test views against clean labels.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    corrupt_pixel_noise, downscale_dense, downscale_sparse, load_dataset, region_mask_per_class, select_keyframes,
    split_train_test, Dataset, SemanticImage,
};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldParams};
use crate::metrics::{ConfusionMatrix, Scores};
use crate::render::{ray_stream, CameraIntrinsics, Pose};
use crate::train::{checkpoint_name, render_image, run_training, Checkpoint, TrainConfig, TrainFrame, Trainer, TrainingSet};

/// Scale of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 320×240, 200k iterations, batch 1024, 64/128 samples, width 256.
    Paper,
    /// 80×60, 20k iterations, batch 512, 32/64 samples, width 256.
    Desk,
    /// 80×60 with a narrow network and short schedule, for CI-sized checks.
    Quick,
}

impl Profile {
    pub fn resolution(self) -> (usize, usize) {
        match self {
            Profile::Paper => (320, 240),
            Profile::Desk | Profile::Quick => (80, 60),
        }
    }

    pub fn train_config(self) -> TrainConfig {
        let base = TrainConfig::default();
        match self {
            Profile::Paper => base,
            Profile::Desk => TrainConfig {
                iterations: 20_000,
                ray_batch: 512,
                n_coarse: 32,
                n_fine: 64,
                ..base
            },
            Profile::Quick => TrainConfig {
                iterations: 2_000,
                ray_batch: 256,
                n_coarse: 32,
                n_fine: 32,
                learning_rate: 5e-3,
                ..base
            },
        }
    }

    pub fn field_config(self, num_classes: usize) -> FieldConfig {
        let base = FieldConfig::with_classes(num_classes);
        match self {
            Profile::Paper | Profile::Desk => base,
            Profile::Quick => FieldConfig {
                trunk_depth: 4,
                trunk_width: 64,
                skip_layer: 3,
                semantic_hidden_width: 32,
                encoding_levels: 6,
                ..base
            },
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            "quick" => Ok(Profile::Quick),
            other => Err(Error::Config(format!("unknown profile {other:?} (paper, desk, quick)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetKind {
    Synthesis,
    SparseFrames,
    Noise,
    SrDense,
    SrSparse,
    Propagation,
}

impl PresetKind {
    pub fn name(self) -> &'static str {
        match self {
            PresetKind::Synthesis => "synthesis",
            PresetKind::SparseFrames => "sparse-frames",
            PresetKind::Noise => "noise",
            PresetKind::SrDense => "sr-dense",
            PresetKind::SrSparse => "sr-sparse",
            PresetKind::Propagation => "propagation",
        }
    }

    fn legal(self) -> &'static [f64] {
        match self {
            PresetKind::Synthesis => &[],
            PresetKind::SparseFrames => &[0.10],
            PresetKind::Noise => &[0.5, 0.9],
            PresetKind::SrDense | PresetKind::SrSparse => &[8.0, 16.0],
            PresetKind::Propagation => &[0.01, 0.05, 0.10],
        }
    }
}

/// A named experiment with its corruption parameter, e.g. `noise:0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub kind: PresetKind,
    pub param: Option<f64>,
}

impl Preset {
    pub const SYNTHESIS: Preset = Preset {
        kind: PresetKind::Synthesis,
        param: None,
    };

    /// Parses `NAME[:PARAM]`. Parameters outside the published set are
    /// rejected unless `allow_unsafe`.
    pub fn parse(text: &str, allow_unsafe: bool) -> Result<Self> {
        let (name, param) = match text.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (text, None),
        };
        let kind = [
            PresetKind::Synthesis,
            PresetKind::SparseFrames,
            PresetKind::Noise,
            PresetKind::SrDense,
            PresetKind::SrSparse,
            PresetKind::Propagation,
        ]
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        let param = param
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::Config(format!("preset parameter {p:?} is not a number")))
            })
            .transpose()?;
        let preset = Preset { kind, param };
        preset.validate(allow_unsafe)?;
        Ok(preset)
    }

    pub fn validate(&self, allow_unsafe: bool) -> Result<()> {
        let legal = self.kind.legal();
        let bad = |m: String| Err(Error::Config(m));
        match (self.kind, self.param) {
            (PresetKind::Synthesis, None) => Ok(()),
            (PresetKind::Synthesis, Some(_)) => bad("synthesis takes no parameter".into()),
            (k, None) => bad(format!("{} needs a parameter, one of {legal:?}", k.name())),
            (k, Some(p)) => {
                if !p.is_finite() {
                    return bad(format!("{} parameter must be finite", k.name()));
                }
                let is_legal = legal.iter().any(|&l| (l - p).abs() < 1e-9);
                if !is_legal && !allow_unsafe {
                    return bad(format!(
                        "{}:{p} outside the legal set {legal:?} (pass --unsafe to override)",
                        k.name()
                    ));
                }
                match k {
                    PresetKind::SrDense | PresetKind::SrSparse if p.fract() != 0.0 || p < 2.0 => {
                        bad(format!("{} factor must be an integer ≥ 2", k.name()))
                    }
                    PresetKind::Noise if !(0.0..=1.0).contains(&p) => bad("noise ratio outside [0, 1]".into()),
                    PresetKind::SparseFrames | PresetKind::Propagation if !(p > 0.0 && p <= 1.0) => {
                        bad(format!("{} fraction outside (0, 1]", k.name()))
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    /// Applies the label corruption to one training frame.
    pub fn corrupt(&self, img: &SemanticImage, num_classes: usize, seed: u64) -> Result<SemanticImage> {
        let p = self.param.unwrap_or_default();
        match self.kind {
            PresetKind::Synthesis | PresetKind::SparseFrames => Ok(img.clone()),
            PresetKind::Noise => corrupt_pixel_noise(img, p, num_classes, seed),
            PresetKind::SrDense => downscale_dense(img, p as usize),
            PresetKind::SrSparse => downscale_sparse(img, p as usize),
            PresetKind::Propagation => region_mask_per_class(img, p, seed),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param {
            Some(p) => write!(f, "{}:{p}", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

impl Serialize for Preset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Preset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Preset::parse(&text, true).map_err(serde::de::Error::custom)
    }
}

/// Fully resolved run settings; dumped verbatim as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub preset: Preset,
    pub width: usize,
    pub height: usize,
    pub train: TrainConfig,
    pub field: FieldConfig,
    /// Rays per slab when rendering evaluation views.
    pub render_chunk: usize,
    pub deterministic: bool,
    pub allow_unsafe: bool,
}

impl RunConfig {
    pub fn new(profile: Profile, preset: Preset, num_classes: usize) -> Self {
        let (width, height) = profile.resolution();
        Self {
            profile,
            preset,
            width,
            height,
            train: profile.train_config(),
            field: profile.field_config(num_classes),
            render_chunk: 1024,
            deterministic: true,
            allow_unsafe: false,
        }
    }

    /// Takes the class count and input normalisation from `dataset`. The
    /// scene box is padded by 5% so its faces stay clear of the encoding's
    /// period boundary.
    pub fn fit_to(&mut self, dataset: &Dataset) {
        let [lo, hi] = dataset.scene_box();
        self.field.num_classes = dataset.num_classes();
        self.field.scene_center = [0, 1, 2].map(|i| 0.5 * (lo[i] + hi[i]));
        self.field.scene_half_extent = [0, 1, 2].map(|i| 0.5 * (hi[i] - lo[i]) * 1.05);
    }

    pub fn validate(&self) -> Result<()> {
        self.preset.validate(self.allow_unsafe)?;
        self.train.validate()?;
        self.field.validate()?;
        if self.render_chunk == 0 {
            return Err(Error::Config("render_chunk must be positive".into()));
        }
        Ok(())
    }

    pub fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("preset".into(), self.preset.to_string()),
            ("profile".into(), format!("{:?}", self.profile).to_lowercase()),
            ("seed".into(), self.train.seed.to_string()),
            ("iterations".into(), self.train.iterations.to_string()),
            ("width".into(), self.width.to_string()),
            ("height".into(), self.height.to_string()),
        ])
    }
}

const STREAM_CORRUPT: u64 = 0xC0DE;

/// Frame indices a preset trains on and evaluates against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_for(preset: &Preset, n_frames: usize, seed: u64) -> Result<Split> {
    let (mut train, test) = split_train_test(n_frames)?;
    if preset.kind == PresetKind::SparseFrames {
        train = select_keyframes(&train, preset.param.unwrap_or(1.0), seed)?;
    }
    Ok(Split { train, test })
}

/// Corrupted copies of the training frames, keyed by frame index. Each frame
/// draws from its own seeded stream.
pub fn corrupted_training_labels(dataset: &Dataset, preset: &Preset, split: &Split, seed: u64) -> Result<Vec<SemanticImage>> {
    split
        .train
        .iter()
        .map(|&f| {
            let frame_seed = ray_stream(seed, &[STREAM_CORRUPT, f as u64]).random();
            preset.corrupt(&dataset.images[f], dataset.num_classes(), frame_seed)
        })
        .collect()
}

pub fn training_set(dataset: &Dataset, split: &Split, labels: Vec<SemanticImage>) -> TrainingSet {
    TrainingSet {
        intrinsics: dataset.intrinsics.clone(),
        bounds: dataset.bounds(),
        num_classes: dataset.num_classes(),
        frames: split
            .train
            .iter()
            .zip(labels)
            .map(|(&f, labels)| TrainFrame {
                pose: dataset.poses[f].clone(),
                labels,
            })
            .collect(),
    }
}

/// Anything that produces a label map for a camera.
pub trait Segmenter: Sync {
    fn segment(&self, frame: usize, intr: &CameraIntrinsics, pose: &Pose, bounds: (f64, f64)) -> Result<SemanticImage>;
}

/// Trained coarse/fine pair rendered with stratification off.
pub struct FieldSegmenter<'a> {
    pub coarse: &'a FieldParams<f32>,
    pub fine: &'a FieldParams<f32>,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub chunk: usize,
}

impl Segmenter for FieldSegmenter<'_> {
    fn segment(&self, _frame: usize, intr: &CameraIntrinsics, pose: &Pose, bounds: (f64, f64)) -> Result<SemanticImage> {
        Ok(render_image(self.coarse, self.fine, intr, pose, bounds, self.n_coarse, self.n_fine, self.chunk)?.labels)
    }
}

/// Test hook that answers with stored ground truth, bypassing the field.
pub struct OracleSegmenter<'a> {
    pub dataset: &'a Dataset,
}

impl Segmenter for OracleSegmenter<'_> {
    fn segment(&self, frame: usize, _: &CameraIntrinsics, _: &Pose, _: (f64, f64)) -> Result<SemanticImage> {
        self.dataset
            .images
            .get(frame)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no frame {frame}")))
    }
}

/// Score JSON: the metric fields plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub scores: Scores,
    pub split: String,
    pub frames: Vec<usize>,
    pub pixels: u64,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Renders `frames` with `segmenter` and scores them against the clean labels.
/// Predictions are returned in `frames` order.
pub fn evaluate(
    segmenter: &dyn Segmenter,
    dataset: &Dataset,
    frames: &[usize],
) -> Result<(ConfusionMatrix, Vec<SemanticImage>)> {
    let mut cm = ConfusionMatrix::new(dataset.num_classes());
    let mut preds = Vec::with_capacity(frames.len());
    for &f in frames {
        let gt = dataset
            .images
            .get(f)
            .ok_or_else(|| Error::InvalidInput(format!("no frame {f}")))?;
        let pred = segmenter.segment(f, &dataset.intrinsics, &dataset.poses[f], dataset.bounds())?;
        cm.accumulate(&pred, gt)?;
        preds.push(pred);
    }
    Ok((cm, preds))
}

pub fn report(cm: &ConfusionMatrix, split: &str, frames: &[usize], metadata: BTreeMap<String, String>) -> Result<EvalReport> {
    Ok(EvalReport {
        scores: cm.scores()?,
        split: split.into(),
        frames: frames.to_vec(),
        pixels: cm.total(),
        metadata,
    })
}

/// Scores the corrupted training labels against their clean originals; the
/// floor a denoising run must beat.
pub fn corrupted_label_scores(dataset: &Dataset, split: &Split, corrupted: &[SemanticImage]) -> Result<Scores> {
    let mut cm = ConfusionMatrix::new(dataset.num_classes());
    for (&f, img) in split.train.iter().zip(corrupted) {
        cm.accumulate(img, &dataset.images[f])?;
    }
    cm.scores()
}

pub fn eval_name(iteration: u64) -> String {
    format!("eval_{iteration:06}.json")
}

/// What a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report: EvalReport,
    pub final_loss: f64,
    pub first_loss: f64,
}

/// Loads `data` at the configured resolution.
pub fn load_for(config: &RunConfig, data: &Path) -> Result<Dataset> {
    load_dataset(data, Some((config.width, config.height)))
}

/// Trains one preset end to end and writes the run directory:
/// `config.json`, `loss.csv`, `ckpt_*.semf`, `eval_*.json`, `renders/`.
pub fn run_experiment(config: &RunConfig, dataset: &Dataset, run_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    if config.field.num_classes != dataset.num_classes() {
        return Err(Error::Config(format!(
            "field has {} classes, dataset {}",
            config.field.num_classes,
            dataset.num_classes()
        )));
    }
    fs::create_dir_all(run_dir.join("renders"))?;
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    fs::write(run_dir.join("config.json"), text)?;

    let seed = config.train.seed;
    let split = split_for(&config.preset, dataset.len(), seed)?;
    let labels = corrupted_training_labels(dataset, &config.preset, &split, seed)?;
    let set = training_set(dataset, &split, labels);
    let mut trainer = Trainer::new(config.train.clone(), &config.field, set)?;
    let metadata = config.metadata();

    let mut last_report = None;
    let palette = dataset.palette();
    let mut on_eval = |t: &Trainer| -> Result<()> {
        let seg = FieldSegmenter {
            coarse: &t.coarse,
            fine: &t.fine,
            n_coarse: t.config.n_coarse,
            n_fine: t.config.n_fine,
            chunk: config.render_chunk,
        };
        let (cm, preds) = evaluate(&seg, dataset, &split.test)?;
        let mut meta = metadata.clone();
        meta.insert("iteration".into(), t.iteration.to_string());
        let r = report(&cm, "test", &split.test, meta)?;
        r.write(&run_dir.join(eval_name(t.iteration)))?;
        log::info!("iter {} test mIoU {:.4} acc {:.4}", t.iteration, r.scores.miou, r.scores.total_acc);
        if t.iteration == t.config.iterations {
            for (&f, pred) in split.test.iter().zip(&preds) {
                pred.save_png(&run_dir.join("renders").join(format!("frame_{f:04}.png")))?;
                pred.colorize(&palette)
                    .save(run_dir.join("renders").join(format!("frame_{f:04}_color.png")))?;
            }
        }
        last_report = Some(r);
        Ok(())
    };
    let outcome = run_training(&mut trainer, run_dir, &metadata, &mut on_eval)?;
    Ok(RunSummary {
        run_dir: run_dir.to_path_buf(),
        checkpoint: run_dir.join(checkpoint_name(trainer.iteration)),
        report: last_report.expect("final evaluation always runs"),
        first_loss: outcome.losses.first().map_or(f64::NAN, |r| r.total),
        final_loss: outcome.losses.last().map_or(f64::NAN, |r| r.total),
    })
}

/// Evaluates a saved checkpoint on `frames` of `dataset`.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, dataset: &Dataset, frames: &[usize], chunk: usize) -> Result<(EvalReport, Vec<SemanticImage>)> {
    if ckpt.fine.config.num_classes != dataset.num_classes() {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, dataset {}",
            ckpt.fine.config.num_classes,
            dataset.num_classes()
        )));
    }
    let seg = FieldSegmenter {
        coarse: &ckpt.coarse,
        fine: &ckpt.fine,
        n_coarse: ckpt.train_config.n_coarse,
        n_fine: ckpt.train_config.n_fine,
        chunk,
    };
    let (cm, preds) = evaluate(&seg, dataset, frames)?;
    let mut meta = ckpt.metadata.clone();
    meta.insert("iteration".into(), ckpt.iteration.to_string());
    Ok((report(&cm, "test", frames, meta)?, preds))
}
