//! Renders the bundled room (or a spec file) into a labelled dataset.
//!
//! ```sh
//! cargo run --release --example synth_scene -- OUT_DIR [SPEC.json]
//! ```

use std::path::PathBuf;

use semnerf::data::{generate_synthetic, load_dataset, SceneSpec};

fn main() -> semnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "room".into()));
    let spec = match args.next() {
        Some(path) => SceneSpec::load(path.as_ref())?,
        None => SceneSpec::bundled(),
    };
    generate_synthetic(&spec, 0, &out)?;
    let ds = load_dataset(&out, None)?;
    println!("{} frames at {}×{} in {}", ds.len(), ds.intrinsics.width, ds.intrinsics.height, out.display());

    let mut census = vec![0usize; ds.num_classes()];
    for img in &ds.images {
        for (c, n) in img.census(ds.num_classes()).into_iter().enumerate() {
            census[c] += n;
        }
    }
    let total: usize = census.iter().sum();
    for (c, n) in census.iter().enumerate() {
        println!("  class {c:>2}: {:5.2}%", 100.0 * *n as f64 / total as f64);
    }
    let preview = out.join("frame_0000_color.png");
    ds.images[0].colorize(&ds.palette()).save(&preview)?;
    println!("preview: {}", preview.display());
    Ok(())
}
