//! Encodes a few world points and queries a freshly initialised field.
//!
//! ```sh
//! cargo run --release --example query_field
//! ```

use semnerf::field::{encode_batch, positional_encode, FieldConfig, FieldParams};

fn main() -> semnerf::Result<()> {
    let enc = positional_encode([0.25, -0.5, 0.0], 2, true)?;
    println!("γ(0.25, -0.5, 0) with L = 2 and raw input ({} values):", enc.len());
    println!("  {enc:.4?}");

    let config = FieldConfig {
        scene_center: [0.0, 1.5, 0.0],
        scene_half_extent: [3.2, 1.6, 3.2],
        ..FieldConfig::with_classes(16)
    };
    let field = FieldParams::<f32>::init(&config, 0)?;
    println!(
        "field: {} trunk layers × {} wide, {} parameters",
        config.trunk_depth,
        config.trunk_width,
        field.num_parameters()
    );

    let points = [[0.0, 1.0, 0.0], [2.0, 0.5, -1.0], [-2.9, 2.9, 2.9]];
    let out = field.forward(encode_batch::<f32>(&points, &config)?.view())?;
    for (i, p) in points.iter().enumerate() {
        let logits = out.logits.row(i);
        let best = (0..logits.len()).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap_or(0);
        println!("  x = {p:?}: σ = {:.4}, top class {best}", out.sigma[i]);
    }
    Ok(())
}
