//! Label corruptions applied to training frames: pixel noise, dense and
//! sparse down-scaling, and per-class region masks.

use std::collections::VecDeque;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{SemanticImage, VOID};
use crate::error::{invalid, Result};

/// Replaces `round(ratio · non_void)` distinct non-void pixels with a
/// uniformly drawn *different* class.
pub fn corrupt_pixel_noise(
    img: &SemanticImage,
    ratio: f64,
    num_classes: usize,
    seed: u64,
) -> Result<SemanticImage> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(invalid(format!("noise ratio {ratio} outside [0, 1]")));
    }
    if num_classes < 2 {
        return Err(invalid("noise needs at least two classes"));
    }
    img.check_alphabet(num_classes)?;
    let candidates: Vec<usize> = img
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != VOID)
        .map(|(i, _)| i)
        .collect();
    let count = (ratio * candidates.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    let labels = out.labels_mut();
    for pick in index::sample(&mut rng, candidates.len(), count) {
        let i = candidates[pick];
        let truth = labels[i];
        let mut other = rng.random_range(0..num_classes as u8 - 1);
        if other >= truth {
            other += 1;
        }
        labels[i] = other;
    }
    Ok(out)
}

fn check_factor(img: &SemanticImage, factor: usize) -> Result<()> {
    if factor < 2 || factor > img.width().min(img.height()) {
        return Err(invalid(format!(
            "down-scale factor {factor} must be in 2..={}",
            img.width().min(img.height())
        )));
    }
    Ok(())
}

/// Samples the label at every `factor`-th grid point and blows it back up
/// to full size by nearest neighbour; every pixel stays supervised.
pub fn downscale_dense(img: &SemanticImage, factor: usize) -> Result<SemanticImage> {
    check_factor(img, factor)?;
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.set(x, y, img.get(x / factor * factor, y / factor * factor));
        }
    }
    Ok(out)
}

/// Keeps only the grid-corner pixels `(x, y) ≡ (0, 0) mod factor`; voids the rest.
pub fn downscale_sparse(img: &SemanticImage, factor: usize) -> Result<SemanticImage> {
    check_factor(img, factor)?;
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if x % factor != 0 || y % factor != 0 {
                out.set(x, y, VOID);
            }
        }
    }
    Ok(out)
}

/// Per class, keeps `max(1, round(fraction · area))` pixels grown as
/// 4-connected breadth-first regions from random seeds; everything else
/// becomes void.
pub fn region_mask_per_class(img: &SemanticImage, area_fraction: f64, seed: u64) -> Result<SemanticImage> {
    if !(area_fraction > 0.0 && area_fraction <= 1.0) {
        return Err(invalid(format!("area fraction {area_fraction} outside (0, 1]")));
    }
    let (w, h) = (img.width(), img.height());
    let labels = img.labels();
    let mut keep = vec![false; labels.len()];
    let mut classes: Vec<u8> = img.alphabet().into_iter().filter(|&l| l != VOID).collect();
    classes.sort_unstable();
    for class in classes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(class) << 32) ^ 0xA5A5_0000);
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let target = ((area_fraction * members.len() as f64).round() as usize).max(1);
        members.shuffle(&mut rng);
        let mut taken = 0;
        let mut seeds = members.iter();
        let mut queue = VecDeque::new();
        while taken < target {
            if queue.is_empty() {
                let Some(&s) = seeds.by_ref().find(|&&i| !keep[i]) else {
                    break;
                };
                keep[s] = true;
                taken += 1;
                queue.push_back(s);
                continue;
            }
            let i = queue.pop_front().expect("non-empty");
            let (x, y) = (i % w, i / w);
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for n in neighbours.into_iter().flatten() {
                if taken == target {
                    break;
                }
                if labels[n] == class && !keep[n] {
                    keep[n] = true;
                    taken += 1;
                    queue.push_back(n);
                }
            }
        }
    }
    let masked = labels
        .iter()
        .zip(&keep)
        .map(|(&l, &k)| if k { l } else { VOID })
        .collect();
    SemanticImage::new(w, h, masked)
}
