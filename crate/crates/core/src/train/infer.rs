//! Full-image rendering for evaluation.

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::SemanticImage;
use crate::error::{invalid, Result};
use crate::field::FieldParams;
use crate::render::{argmax, generate_ray, ray_stream, render_rays, CameraIntrinsics, Pose, SamplingConfig};
use crate::scalar::Real;

/// Rendered label map plus the fine network's class probabilities
/// (`pixels × classes`, row-major over pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage<F> {
    pub labels: SemanticImage,
    pub probs: Array2<F>,
}

/// Renders every pixel with stratification off; labels are the fine argmax
/// with ties going to the lowest class. `chunk` only bounds memory.
#[allow(clippy::too_many_arguments)]
pub fn render_image<F: Real>(
    coarse: &FieldParams<F>,
    fine: &FieldParams<F>,
    intr: &CameraIntrinsics,
    pose: &Pose,
    bounds: (f64, f64),
    n_coarse: usize,
    n_fine: usize,
    chunk: usize,
) -> Result<RenderedImage<F>> {
    if chunk == 0 {
        return Err(invalid("render chunk must be positive"));
    }
    intr.validate()?;
    let cfg = SamplingConfig {
        n_coarse,
        n_fine,
        perturb: false,
    };
    let (w, h) = (intr.width, intr.height);
    let classes = fine.config.num_classes;
    let pixels: Vec<usize> = (0..w * h).collect();
    let rows: Vec<Vec<Vec<F>>> = pixels
        .par_chunks(chunk)
        .map(|idx| -> Result<Vec<Vec<F>>> {
            let rays = idx
                .iter()
                .map(|&i| generate_ray(intr, pose, i % w, i / w, bounds))
                .collect::<Result<Vec<_>>>()?;
            // Unused with perturb off, but render_rays wants one stream per ray.
            let mut rngs: Vec<_> = idx.iter().map(|&i| ray_stream(0, &[i as u64])).collect();
            let out = render_rays(coarse, fine, &rays, &cfg, &mut rngs)?;
            Ok(out.into_iter().map(|px| px.fine.class_probs).collect())
        })
        .collect::<Result<_>>()?;
    let mut probs = Array2::<F>::zeros((w * h, classes));
    let mut labels = Vec::with_capacity(w * h);
    for (i, p) in rows.into_iter().flatten().enumerate() {
        labels.push(argmax(&p) as u8);
        probs.row_mut(i).assign(&ndarray::ArrayView1::from(&p));
    }
    Ok(RenderedImage {
        labels: SemanticImage::new(w, h, labels)?,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use nalgebra::Vector3;

    fn setup() -> (FieldParams<f32>, FieldParams<f32>, CameraIntrinsics, Pose) {
        let cfg = FieldConfig {
            trunk_depth: 2,
            trunk_width: 16,
            skip_layer: 2,
            semantic_hidden_width: 8,
            encoding_levels: 3,
            ..FieldConfig::with_classes(4)
        };
        let intr = CameraIntrinsics {
            width: 12,
            height: 9,
            fx: 8.0,
            fy: 8.0,
            cx: 6.0,
            cy: 4.5,
        };
        let pose = Pose::look_at(Vector3::new(0.3, 0.2, -2.0), Vector3::zeros(), Vector3::y()).unwrap();
        (
            FieldParams::init(&cfg, 4).unwrap(),
            FieldParams::init(&cfg, 5).unwrap(),
            intr,
            pose,
        )
    }

    #[test]
    fn chunking_never_changes_output() {
        let (c, f, intr, pose) = setup();
        let a = render_image(&c, &f, &intr, &pose, (0.1, 4.0), 8, 8, 1).unwrap();
        let b = render_image(&c, &f, &intr, &pose, (0.1, 4.0), 8, 8, 4096).unwrap();
        let d = render_image(&c, &f, &intr, &pose, (0.1, 4.0), 8, 8, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, d);
    }

    #[test]
    fn zero_networks_pick_class_zero() {
        let (c, _, intr, pose) = setup();
        let z = c.zeros_like();
        let img = render_image(&z, &z, &intr, &pose, (0.1, 4.0), 4, 4, 16).unwrap();
        assert_eq!(img.labels.labels().len(), 108);
        assert!(img.labels.labels().iter().all(|&l| l == 0));
    }
}
