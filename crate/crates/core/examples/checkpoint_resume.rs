//! Trains a few steps, saves a checkpoint, resumes from it and checks that
//! the resumed run lands on the same parameters as an uninterrupted one.
//!
//! ```sh
//! cargo run --release --example checkpoint_resume
//! ```

use semnerf::data::{generate_synthetic, load_dataset, SceneSpec};
use semnerf::experiment::{corrupted_training_labels, split_for, training_set, Preset, Profile, RunConfig};
use semnerf::train::{Checkpoint, Trainer};

fn main() -> semnerf::Result<()> {
    let work = tempfile::tempdir()?;
    generate_synthetic(&SceneSpec::bundled(), 0, work.path())?;
    let ds = load_dataset(work.path(), None)?;
    let mut config = RunConfig::new(Profile::Quick, Preset::SYNTHESIS, ds.num_classes());
    config.fit_to(&ds);
    config.train.ray_batch = 128;
    let split = split_for(&config.preset, ds.len(), 0)?;
    let labels = corrupted_training_labels(&ds, &config.preset, &split, 0)?;
    let set = training_set(&ds, &split, labels);

    let mut straight = Trainer::new(config.train.clone(), &config.field, set.clone())?;
    for _ in 0..20 {
        straight.step()?;
    }

    let mut first = Trainer::new(config.train.clone(), &config.field, set.clone())?;
    for _ in 0..10 {
        first.step()?;
    }
    let path = work.path().join("half.semf");
    first.checkpoint(config.metadata()).save(&path)?;
    println!("saved {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let mut resumed = Trainer::resume(Checkpoint::load(&path)?, set)?;
    let mut last = 0.0;
    for _ in 0..10 {
        last = resumed.step()?.total;
    }
    println!("resumed to iteration {}, loss {last:.4}", resumed.iteration);
    println!("identical to uninterrupted run: {}", resumed.fine == straight.fine && resumed.coarse == straight.coarse);
    Ok(())
}
