//! Scores a checkpoint on the test split of a dataset, or, without a
//! checkpoint, scores a deliberately degraded copy of the ground truth.
//!
//! ```sh
//! cargo run --release --example evaluate -- DATA_DIR [CKPT]
//! ```

use std::path::PathBuf;

use semnerf::data::{load_dataset, split_train_test};
use semnerf::experiment::evaluate_checkpoint;
use semnerf::metrics::{ConfusionMatrix, Scores};
use semnerf::train::Checkpoint;

fn print(scores: &Scores) {
    println!("mIoU {:.4}  total acc {:.4}  avg acc {:.4}", scores.miou, scores.total_acc, scores.avg_acc);
    for c in &scores.per_class {
        let iou = c.iou.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("  class {:>2}: IoU {iou:>5}  support {}", c.class, c.support);
    }
}

fn main() -> semnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().expect("usage: evaluate DATA_DIR [CKPT]"));
    match args.next() {
        Some(path) => {
            let ckpt = Checkpoint::load(path.as_ref())?;
            let dim = |k: &str| ckpt.metadata.get(k).and_then(|v| v.parse().ok());
            let ds = load_dataset(&data, dim("width").zip(dim("height")))?;
            let (_, test) = split_train_test(ds.len())?;
            let (report, _) = evaluate_checkpoint(&ckpt, &ds, &test, 1024)?;
            print(&report.scores);
        }
        None => {
            let ds = load_dataset(&data, None)?;
            let (_, test) = split_train_test(ds.len())?;
            let mut cm = ConfusionMatrix::new(ds.num_classes());
            for &f in &test {
                // Predict with the frame two steps later: a crude novel-view guess.
                let guess = &ds.images[(f + 2) % ds.len()];
                cm.accumulate(guess, &ds.images[f])?;
            }
            print(&cm.scores()?);
        }
    }
    Ok(())
}
