//! Segmentation scores recomputed pixel by pixel, without a confusion matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semnerf::data::{SemanticImage, VOID};
use semnerf::metrics::{ConfusionMatrix, Scores};

pub fn random_pair(rng: &mut impl Rng, size: usize, classes: u8) -> (SemanticImage, SemanticImage) {
    let void_rate = rng.random_range(0.0..0.5);
    let gt: Vec<u8> = (0..size * size)
        .map(|_| if rng.random_bool(void_rate) { VOID } else { rng.random_range(0..classes) })
        .collect();
    // Mostly-correct predictions so IoUs spread over (0, 1).
    let accuracy = rng.random_range(0.0..1.0);
    let pred: Vec<u8> = gt
        .iter()
        .map(|&g| {
            if g != VOID && rng.random_bool(accuracy) {
                g
            } else {
                rng.random_range(0..classes)
            }
        })
        .collect();
    (
        SemanticImage::new(size, size, pred).unwrap(),
        SemanticImage::new(size, size, gt).unwrap(),
    )
}

/// `(miou, total_acc, avg_acc)` from raw pixels.
pub fn brute_force(pairs: &[(SemanticImage, SemanticImage)], classes: usize) -> (f64, f64, f64) {
    let (mut iou_sum, mut iou_n, mut rec_sum, mut rec_n) = (0.0, 0, 0.0, 0);
    let (mut correct, mut counted) = (0u64, 0u64);
    for (pred, gt) in pairs {
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g != VOID {
                counted += 1;
                correct += u64::from(p == g);
            }
        }
    }
    for k in 0..classes as u8 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (pred, gt) in pairs {
            for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
                if g == VOID {
                    continue;
                }
                match (p == k, g == k) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        if tp + fp + fn_ > 0 {
            iou_sum += tp as f64 / (tp + fp + fn_) as f64;
            iou_n += 1;
        }
        if tp + fn_ > 0 {
            rec_sum += tp as f64 / (tp + fn_) as f64;
            rec_n += 1;
        }
    }
    (iou_sum / iou_n as f64, correct as f64 / counted as f64, rec_sum / rec_n as f64)
}

pub fn scores_of(pairs: &[(SemanticImage, SemanticImage)], classes: usize) -> Scores {
    let mut cm = ConfusionMatrix::new(classes);
    for (p, g) in pairs {
        cm.accumulate(p, g).unwrap();
    }
    cm.scores().unwrap()
}

/// Number of mismatches over `count` single images plus their union.
pub fn run(count: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    let mut mismatches = 0;
    let classes = 8;
    for _ in 0..count {
        let pair = random_pair(&mut rng, 32, classes as u8);
        let s = scores_of(std::slice::from_ref(&pair), classes);
        mismatches += usize::from((s.miou, s.total_acc, s.avg_acc) != brute_force(std::slice::from_ref(&pair), classes));
        all.push(pair);
    }
    let s = scores_of(&all, classes);
    mismatches + usize::from((s.miou, s.total_acc, s.avg_acc) != brute_force(&all, classes))
}
