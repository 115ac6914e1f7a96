//! Applies every experiment corruption to one bundled frame and reports how
//! much supervision survives.
//!
//! ```sh
//! cargo run --release --example corrupt_labels -- [OUT_DIR]
//! ```

use std::path::PathBuf;

use semnerf::data::{generate_synthetic, load_dataset, SceneSpec, VOID};
use semnerf::experiment::Preset;

fn main() -> semnerf::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "corruptions".into()));
    let data = out.join("room");
    generate_synthetic(&SceneSpec::bundled(), 0, &data)?;
    let ds = load_dataset(&data, None)?;
    let clean = &ds.images[0];
    let palette = ds.palette();
    clean.colorize(&palette).save(out.join("clean.png"))?;

    for text in [
        "noise:0.5",
        "noise:0.9",
        "sr-dense:8",
        "sr-sparse:8",
        "sr-dense:16",
        "sr-sparse:16",
        "propagation:0.01",
        "propagation:0.10",
    ] {
        let preset = Preset::parse(text, false)?;
        let img = preset.corrupt(clean, ds.num_classes(), 7)?;
        let kept = img.non_void_count();
        let agree = img
            .labels()
            .iter()
            .zip(clean.labels())
            .filter(|(a, b)| **a != VOID && a == b)
            .count();
        println!(
            "{text:<17} {kept:>5} labelled px ({:5.1}%), {:5.1}% of them correct",
            100.0 * kept as f64 / clean.non_void_count() as f64,
            100.0 * agree as f64 / kept.max(1) as f64
        );
        img.colorize(&palette).save(out.join(format!("{}.png", text.replace(':', "_"))))?;
    }
    Ok(())
}
