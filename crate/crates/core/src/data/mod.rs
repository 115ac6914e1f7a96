//! Datasets: label-map I/O, the synthetic room generator, frame splits and
//! the corruption transforms used by the experiments.

pub mod corrupt;
pub mod image;
pub mod manifest;
pub mod scene;

pub use corrupt::{corrupt_pixel_noise, downscale_dense, downscale_sparse, region_mask_per_class};
pub use image::{default_palette, SemanticImage, VOID};
pub use manifest::{load_dataset, write_dataset, Dataset, DatasetManifest, FrameEntry};
pub use scene::{generate_synthetic, oracle_render, SceneSpec, VoxelGrid};

use crate::error::{invalid, Result};

/// Every 5th frame trains (0, 5, 10, ...); every 5th frame starting at the
/// second one tests (1, 6, 11, ...). Residues 2–4 are unused.
pub fn split_train_test(n_frames: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_frames < 2 {
        return Err(invalid("need at least two frames to split"));
    }
    let train = (0..n_frames).step_by(5).collect();
    let test = (1..n_frames).step_by(5).collect();
    Ok((train, test))
}

/// Evenly spaced `⌈fraction · |train|⌉` frames of `train`.
///
/// Selection is stride-based and does not consume `_seed`.
pub fn select_keyframes(train: &[usize], fraction: f64, _seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("keyframe fraction {fraction} outside (0, 1]")));
    }
    if train.is_empty() {
        return Err(invalid("no training frames to select from"));
    }
    let n = train.len();
    // Guard against 0.1 · 180 = 18.000000000000004 style overshoot.
    let k = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok((0..k).map(|i| train[i * n / k]).collect())
}
