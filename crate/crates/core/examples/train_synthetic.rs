//! Generates the bundled room, trains a preset on it and prints test scores.
//!
//! ```sh
//! cargo run --release --example train_synthetic -- [PRESET] [PROFILE] [ITERS]
//! cargo run --release --example train_synthetic -- noise:0.5 quick 800
//! ```

use std::time::Instant;

use semnerf::data::{generate_synthetic, load_dataset, SceneSpec};
use semnerf::experiment::{run_experiment, Preset, Profile, RunConfig};

fn main() -> semnerf::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let preset = Preset::parse(&args.next().unwrap_or_else(|| "synthesis".into()), false)?;
    let profile: Profile = args.next().unwrap_or_else(|| "quick".into()).parse()?;
    let iters: Option<u64> = args.next().and_then(|s| s.parse().ok());

    let work = tempfile::tempdir()?;
    let spec = SceneSpec::bundled();
    generate_synthetic(&spec, 0, &work.path().join("data"))?;
    let mut config = RunConfig::new(profile, preset, spec.num_classes);
    if let Some(n) = iters {
        config.train.iterations = n;
    }
    let dataset = load_dataset(&work.path().join("data"), Some((config.width, config.height)))?;
    config.fit_to(&dataset);

    let start = Instant::now();
    let summary = run_experiment(&config, &dataset, &work.path().join("run"))?;
    let s = &summary.report.scores;
    println!(
        "{preset} {profile:?}: loss {:.3} -> {:.3}, mIoU {:.4}, total acc {:.4}, avg acc {:.4} ({:.1}s)",
        summary.first_loss,
        summary.final_loss,
        s.miou,
        s.total_acc,
        s.avg_acc,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
