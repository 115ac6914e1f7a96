//! Optimization of the coarse/fine pair against semantic labels.

pub mod adam;
pub mod checkpoint;
pub mod infer;
pub mod loss;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use infer::{render_image, RenderedImage};
pub use loss::{loss_and_gradients, loss_and_gradients_fixed, plan_samples, semantic_loss, Gradients, LossReport, RayPlan};

use crate::data::{SemanticImage, VOID};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldParams};
use crate::render::{generate_ray, ray_stream, CameraIntrinsics, Pose};

/// Optimizer and sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub ray_batch: usize,
    pub iterations: u64,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub seed: u64,
    /// 0 disables periodic evaluation.
    pub eval_every: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Rays per forward/backward slab.
    pub chunk_rays: usize,
    /// Std-dev of Gaussian noise on the density pre-activation (0 = off).
    pub density_noise_std: f64,
    pub perturb: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            ray_batch: 1024,
            iterations: 200_000,
            n_coarse: 64,
            n_fine: 128,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            chunk_rays: 64,
            density_noise_std: 0.0,
            perturb: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.ray_batch == 0 {
            return bad("ray_batch must be at least 1".into());
        }
        if self.n_coarse == 0 {
            return bad("n_coarse must be at least 1".into());
        }
        if self.chunk_rays == 0 {
            return bad("chunk_rays must be at least 1".into());
        }
        if !(self.density_noise_std >= 0.0) {
            return bad("density_noise_std must be non-negative".into());
        }
        Ok(())
    }
}

/// One supervised view.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub pose: Pose,
    pub labels: SemanticImage,
}

/// Frames sharing one camera model and depth range.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub intrinsics: CameraIntrinsics,
    pub bounds: (f64, f64),
    pub num_classes: usize,
    pub frames: Vec<TrainFrame>,
}

impl TrainingSet {
    /// `(frame, pixel)` of every non-void label.
    fn pixel_pool(&self) -> Result<Vec<(u32, u32)>> {
        let mut pool = Vec::new();
        for (f, frame) in self.frames.iter().enumerate() {
            if frame.labels.width() != self.intrinsics.width || frame.labels.height() != self.intrinsics.height {
                return Err(Error::Config(format!("frame {f} does not match the camera size")));
            }
            frame.labels.check_alphabet(self.num_classes)?;
            for (i, &l) in frame.labels.labels().iter().enumerate() {
                if l != VOID {
                    pool.push((f as u32, i as u32));
                }
            }
        }
        if pool.is_empty() {
            return Err(Error::Config("training set has no labelled pixels".into()));
        }
        Ok(pool)
    }
}

const STREAM_BATCH: u64 = 0xBA7C;
const STREAM_RAY: u64 = 0x5A11;
const STREAM_INIT: u64 = 0x1417;

/// Network pair, optimizer state and the sampling pool.
pub struct Trainer {
    pub config: TrainConfig,
    pub coarse: FieldParams<f32>,
    pub fine: FieldParams<f32>,
    pub coarse_adam: AdamState<f32>,
    pub fine_adam: AdamState<f32>,
    pub iteration: u64,
    set: TrainingSet,
    pool: Vec<(u32, u32)>,
}

impl Trainer {
    /// Fresh networks seeded from `config.seed`.
    pub fn new(config: TrainConfig, field: &FieldConfig, set: TrainingSet) -> Result<Self> {
        config.validate()?;
        if field.num_classes != set.num_classes {
            return Err(Error::Config(format!(
                "network has {} classes, dataset {}",
                field.num_classes, set.num_classes
            )));
        }
        let mut seeds = ray_stream(config.seed, &[STREAM_INIT]);
        let coarse = FieldParams::init(field, seeds.random())?;
        let fine = FieldParams::init(field, seeds.random())?;
        let pool = set.pixel_pool()?;
        Ok(Self {
            coarse_adam: AdamState::new(&coarse),
            fine_adam: AdamState::new(&fine),
            coarse,
            fine,
            iteration: 0,
            config,
            set,
            pool,
        })
    }

    /// Resumes from a checkpoint; the checkpoint's train config wins.
    pub fn resume(ckpt: Checkpoint, set: TrainingSet) -> Result<Self> {
        ckpt.train_config.validate()?;
        let pool = set.pixel_pool()?;
        Ok(Self {
            config: ckpt.train_config,
            coarse: ckpt.coarse,
            fine: ckpt.fine,
            coarse_adam: ckpt.coarse_adam,
            fine_adam: ckpt.fine_adam,
            iteration: ckpt.iteration,
            set,
            pool,
        })
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.set
    }

    /// Number of labelled pixels rays are drawn from.
    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    /// One optimizer step on a fresh ray batch.
    pub fn step(&mut self) -> Result<LossReport> {
        let iter = self.iteration;
        let seed = self.config.seed;
        let mut pick = ray_stream(seed, &[STREAM_BATCH, iter]);
        let w = self.set.intrinsics.width;
        let mut rays = Vec::with_capacity(self.config.ray_batch);
        let mut labels = Vec::with_capacity(self.config.ray_batch);
        for _ in 0..self.config.ray_batch {
            let (f, p) = self.pool[pick.random_range(0..self.pool.len())];
            let frame = &self.set.frames[f as usize];
            let p = p as usize;
            rays.push(generate_ray(&self.set.intrinsics, &frame.pose, p % w, p / w, self.set.bounds)?);
            labels.push(frame.labels.labels()[p]);
        }
        let mut rngs: Vec<_> = (0..rays.len() as u64)
            .map(|b| ray_stream(seed, &[STREAM_RAY, iter, b]))
            .collect();
        let grads = loss_and_gradients(&self.coarse, &self.fine, &rays, &labels, &self.config, &mut rngs)?;
        if !grads.coarse.is_finite() || !grads.fine.is_finite() {
            return Err(Error::NonFinite {
                ray: 0,
                detail: format!("non-finite gradient at iteration {iter}"),
            });
        }
        adam_step(&mut self.coarse, &grads.coarse, &mut self.coarse_adam, self.config.learning_rate);
        adam_step(&mut self.fine, &grads.fine, &mut self.fine_adam, self.config.learning_rate);
        self.iteration += 1;
        Ok(grads.report)
    }

    pub fn checkpoint(&self, metadata: std::collections::BTreeMap<String, String>) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            coarse: self.coarse.clone(),
            fine: self.fine.clone(),
            coarse_adam: self.coarse_adam.clone(),
            fine_adam: self.fine_adam.clone(),
            train_config: self.config.clone(),
            metadata,
        }
    }
}

/// File name of the checkpoint written after `iteration` steps.
pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration:06}.semf")
}

/// What [`run_training`] leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub losses: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs `trainer` to `config.iterations`, appending `iter,loss,coarse,fine`
/// rows to `run_dir/loss.csv` and writing checkpoints. `on_eval` is called
/// every `eval_every` iterations and after the last one.
pub fn run_training(
    trainer: &mut Trainer,
    run_dir: &Path,
    metadata: &std::collections::BTreeMap<String, String>,
    on_eval: &mut dyn FnMut(&Trainer) -> Result<()>,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(run_dir)?;
    let resumed = trainer.iteration > 0;
    let csv_path = run_dir.join("loss.csv");
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(resumed)
        .write(true)
        .truncate(!resumed)
        .open(&csv_path)?;
    let mut csv = BufWriter::new(file);
    if !resumed {
        writeln!(csv, "iter,loss,coarse,fine")?;
    }
    let mut outcome = TrainOutcome {
        losses: Vec::new(),
        checkpoints: Vec::new(),
    };
    let total = trainer.config.iterations;
    while trainer.iteration < total {
        let report = trainer.step()?;
        let it = trainer.iteration;
        writeln!(csv, "{it},{},{},{}", report.total, report.coarse, report.fine)?;
        outcome.losses.push(report);
        if it % 100 == 0 || it == 1 {
            log::info!("iter {it}/{total} loss {:.4}", report.total);
        }
        let every = trainer.config.checkpoint_every;
        if every > 0 && it % every == 0 && it != total {
            let path = run_dir.join(checkpoint_name(it));
            trainer.checkpoint(metadata.clone()).save(&path)?;
            outcome.checkpoints.push(path);
        }
        let eval_every = trainer.config.eval_every;
        if eval_every > 0 && it % eval_every == 0 && it != total {
            csv.flush()?;
            on_eval(trainer)?;
        }
    }
    csv.flush()?;
    let path = run_dir.join(checkpoint_name(trainer.iteration));
    trainer.checkpoint(metadata.clone()).save(&path)?;
    outcome.checkpoints.push(path);
    on_eval(trainer)?;
    Ok(outcome)
}
