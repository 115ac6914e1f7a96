//! Casts a ray through an analytic two-slab density and walks through the
//! hierarchical sampler and the compositor by hand.
//!
//! ```sh
//! cargo run --release --example render_rays
//! ```

use nalgebra::Vector3;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semnerf::render::{composite, generate_ray, importance_samples, stratified_samples, CameraIntrinsics, Pose};

/// A thin class-1 wall at 3 m in front of a faint class-0 haze.
fn density(t: f64) -> (f64, [f64; 2]) {
    if (3.0..3.2).contains(&t) {
        (40.0, [-2.0, 2.0])
    } else {
        (0.02, [1.0, -1.0])
    }
}

fn main() -> semnerf::Result<()> {
    let intr = CameraIntrinsics {
        width: 80,
        height: 60,
        fx: 40.0,
        fy: 40.0,
        cx: 40.0,
        cy: 30.0,
    };
    let pose = Pose::look_at(Vector3::zeros(), Vector3::z(), Vector3::y())?;
    let ray = generate_ray(&intr, &pose, 40, 30, (0.1, 10.0))?;
    println!("center ray: origin {:?}, direction {:?}", ray.origin.as_slice(), ray.direction.as_slice());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let coarse = stratified_samples(&ray, 16, true, &mut rng)?;
    let eval = |t: &[f64]| {
        let sigma: Vec<f64> = t.iter().map(|&t| density(t).0).collect();
        let logits = Array2::from_shape_fn((t.len(), 2), |(i, c)| density(t[i]).1[c]);
        (sigma, logits)
    };
    let (sigma, logits) = eval(&coarse.t);
    let c = composite(&sigma, logits.view(), &coarse)?;
    println!("coarse: 16 samples, opacity {:.3}, p(class 1) {:.3}", c.opacity, c.class_probs[1]);

    let fine = importance_samples(&coarse, &c.weights, 32, true, &mut rng)?;
    let near_wall = fine.t.iter().filter(|t| (2.6..3.6).contains(*t)).count();
    println!("fine: {} samples, {near_wall} of them within 0.6 m of the wall", fine.len());
    let (sigma, logits) = eval(&fine.t);
    let f = composite(&sigma, logits.view(), &fine)?;
    println!("fine: opacity {:.3}, p(class 1) {:.3}, argmax {}", f.opacity, f.class_probs[1], f.argmax());
    Ok(())
}
