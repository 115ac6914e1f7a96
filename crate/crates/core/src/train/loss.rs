//! Cross-entropy over coarse and fine composites and its exact gradient.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::VOID;
use crate::error::{invalid, Error, Result};
use crate::field::{encode_batch, FieldParams};
use crate::render::{composite, composite_backward, importance_samples, stratified_samples, Ray, SampleSet};
use crate::scalar::Real;

/// Lower bound applied to probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Batch loss in nats, averaged over non-void rays.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub coarse: f64,
    pub fine: f64,
    /// Void rays in the batch (contribute nothing).
    pub masked: usize,
    pub rays: usize,
}

fn check_label(label: u8, num_classes: usize, ray: usize) -> Result<Option<usize>> {
    match label {
        VOID => Ok(None),
        l if (l as usize) < num_classes => Ok(Some(l as usize)),
        l => Err(invalid(format!(
            "ray {ray}: label {l} outside 0..{num_classes} and not void"
        ))),
    }
}

/// `-log max(p, LOG_CLAMP)` and whether the clamp was active.
fn nll<F: Real>(p: F) -> (f64, bool) {
    let p = p.f64();
    if p < LOG_CLAMP {
        (-LOG_CLAMP.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

/// Mean over non-void rays of `-log p_c[gt] - log p_f[gt]`.
pub fn semantic_loss<F: Real>(coarse_probs: &[Vec<F>], fine_probs: &[Vec<F>], gt: &[u8]) -> Result<LossReport> {
    if coarse_probs.len() != gt.len() || fine_probs.len() != gt.len() {
        return Err(invalid("probability and label batches differ in length"));
    }
    let mut report = LossReport {
        rays: gt.len(),
        ..LossReport::default()
    };
    let mut valid = 0usize;
    for (i, ((pc, pf), &label)) in coarse_probs.iter().zip(fine_probs).zip(gt).enumerate() {
        let num_classes = pc.len();
        if pf.len() != num_classes {
            return Err(invalid(format!("ray {i}: coarse/fine class counts differ")));
        }
        match check_label(label, num_classes, i)? {
            None => report.masked += 1,
            Some(c) => {
                valid += 1;
                report.coarse += nll(pc[c]).0;
                report.fine += nll(pf[c]).0;
            }
        }
    }
    if valid > 0 {
        report.coarse /= valid as f64;
        report.fine /= valid as f64;
    }
    report.total = report.coarse + report.fine;
    Ok(report)
}

/// Sample placement for one ray, frozen before differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPlan {
    pub coarse: SampleSet,
    pub fine: SampleSet,
    /// Additive density pre-activation noise per sample (empty when off).
    pub coarse_noise: Vec<f64>,
    pub fine_noise: Vec<f64>,
}

/// Loss and gradients of both networks for one batch.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub report: LossReport,
    pub coarse: FieldParams<F>,
    pub fine: FieldParams<F>,
}

fn draw_noise(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    if std > 0.0 {
        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
    } else {
        Vec::new()
    }
}

fn noise_view<F: Real>(noise: &[f64]) -> Option<Array1<F>> {
    (!noise.is_empty()).then(|| noise.iter().map(|&v| F::of(v)).collect())
}

/// Places coarse (stratified) and fine (importance) samples for every ray.
/// The coarse network is evaluated without gradient tracking.
pub fn plan_samples<F: Real>(
    coarse: &FieldParams<F>,
    rays: &[Ray],
    cfg: &TrainConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<RayPlan>> {
    if rngs.len() != rays.len() {
        return Err(invalid("one random stream per ray required"));
    }
    let mut plans = Vec::with_capacity(rays.len());
    for (ray_chunk, rng_chunk) in rays.chunks(cfg.chunk_rays.max(1)).zip(rngs.chunks_mut(cfg.chunk_rays.max(1))) {
        let mut sets = Vec::with_capacity(ray_chunk.len());
        let mut noise = Vec::with_capacity(ray_chunk.len());
        for (ray, rng) in ray_chunk.iter().zip(rng_chunk.iter_mut()) {
            sets.push(stratified_samples(ray, cfg.n_coarse, cfg.perturb, rng)?);
            noise.push(draw_noise(rng, cfg.n_coarse, cfg.density_noise_std));
        }
        let points: Vec<[f64; 3]> = ray_chunk
            .iter()
            .zip(&sets)
            .flat_map(|(r, s)| s.positions(r))
            .collect();
        let encoded = encode_batch::<F>(&points, &coarse.config)?;
        let flat_noise: Vec<f64> = noise.iter().flatten().copied().collect();
        let out = match noise_view::<F>(&flat_noise) {
            Some(n) => coarse.forward_cached_noisy(encoded.view(), Some(n.view()))?.0,
            None => coarse.forward(encoded.view())?,
        };
        let sigma = out.sigma.as_slice().expect("contiguous");
        for (i, ((set, rng), coarse_noise)) in sets.into_iter().zip(rng_chunk.iter_mut()).zip(noise).enumerate() {
            let range = i * cfg.n_coarse..(i + 1) * cfg.n_coarse;
            let composited = composite(&sigma[range.clone()], out.logits.slice(s![range, ..]), &set)
                .map_err(|e| Error::NonFinite {
                    ray: plans.len(),
                    detail: e.to_string(),
                })?;
            let weights: Vec<f64> = composited.weights.iter().map(|w| w.f64()).collect();
            let fine = importance_samples(&set, &weights, cfg.n_fine, cfg.perturb, rng)?;
            let fine_noise = draw_noise(rng, fine.len(), cfg.density_noise_std);
            plans.push(RayPlan {
                coarse: set,
                fine,
                coarse_noise,
                fine_noise,
            });
        }
    }
    Ok(plans)
}

struct ChunkResult<F> {
    coarse_nll: f64,
    fine_nll: f64,
    coarse: FieldParams<F>,
    fine: FieldParams<F>,
}

/// Forward + backward of one network over the given rays; returns the summed
/// negative log-likelihood and accumulates `scale`-weighted gradients.
fn network_pass<F: Real>(
    params: &FieldParams<F>,
    rays: &[(usize, &Ray, &SampleSet, &[f64], usize)],
    scale: F,
    grads: &mut FieldParams<F>,
) -> Result<f64> {
    let points: Vec<[f64; 3]> = rays.iter().flat_map(|(_, r, s, _, _)| s.positions(r)).collect();
    let noise: Vec<f64> = rays.iter().flat_map(|(_, _, _, n, _)| n.iter().copied()).collect();
    let encoded = encode_batch::<F>(&points, &params.config)?;
    let noise = noise_view::<F>(&noise);
    let (out, cache) = params.forward_cached_noisy(encoded.view(), noise.as_ref().map(|n| n.view()))?;
    let sigma = out.sigma.as_slice().expect("contiguous");
    let mut d_sigma = Array1::<F>::zeros(points.len());
    let mut d_logits = Array2::<F>::zeros(out.logits.raw_dim());
    let mut total = 0.0;
    let mut offset = 0;
    for &(ray_index, _, set, _, label) in rays {
        let range = offset..offset + set.len();
        offset += set.len();
        let sig = &sigma[range.clone()];
        let logits = out.logits.slice(s![range.clone(), ..]);
        if sig.iter().any(|v| !v.is_finite()) || logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                ray: ray_index,
                detail: "network produced non-finite density or logits".into(),
            });
        }
        let rendered = composite(sig, logits, set)?;
        let (loss, clamped) = nll(rendered.class_probs[label]);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                ray: ray_index,
                detail: format!("loss {loss}"),
            });
        }
        total += loss;
        if clamped {
            continue;
        }
        // ∂(-log softmax(r)[gt]) / ∂r = p - onehot(gt)
        let d_rendered: Vec<F> = rendered
            .class_probs
            .iter()
            .enumerate()
            .map(|(c, &p)| scale * if c == label { p - F::one() } else { p })
            .collect();
        let (ds, dl) = composite_backward(sig, logits, set, &rendered, &d_rendered);
        d_sigma
            .slice_mut(s![range.clone()])
            .assign(&Array1::from(ds));
        d_logits.slice_mut(s![range, ..]).assign(&dl);
    }
    params.backward(&cache, d_sigma.view(), d_logits.view(), grads);
    Ok(total)
}

/// Exact gradients of the mean batch loss for frozen sample placements.
///
/// Rays are processed in fixed chunks of `chunk_rays`; chunk results are
/// reduced in chunk order so the result does not depend on thread count.
pub fn loss_and_gradients_fixed<F: Real>(
    coarse: &FieldParams<F>,
    fine: &FieldParams<F>,
    rays: &[Ray],
    plans: &[RayPlan],
    labels: &[u8],
    chunk_rays: usize,
) -> Result<Gradients<F>> {
    if rays.is_empty() {
        return Err(invalid("empty ray batch"));
    }
    if plans.len() != rays.len() || labels.len() != rays.len() {
        return Err(invalid("rays, plans and labels differ in length"));
    }
    let num_classes = coarse.config.num_classes;
    let mut active = Vec::with_capacity(rays.len());
    for (i, &label) in labels.iter().enumerate() {
        if let Some(c) = check_label(label, num_classes, i)? {
            active.push((i, c));
        }
    }
    let mut result = Gradients {
        report: LossReport {
            masked: rays.len() - active.len(),
            rays: rays.len(),
            ..LossReport::default()
        },
        coarse: coarse.zeros_like(),
        fine: fine.zeros_like(),
    };
    if active.is_empty() {
        return Ok(result);
    }
    let scale = F::of(1.0 / active.len() as f64);
    let chunks: Vec<ChunkResult<F>> = active
        .par_chunks(chunk_rays.max(1))
        .map(|chunk| -> Result<ChunkResult<F>> {
            let coarse_rays: Vec<_> = chunk
                .iter()
                .map(|&(i, c)| (i, &rays[i], &plans[i].coarse, plans[i].coarse_noise.as_slice(), c))
                .collect();
            let fine_rays: Vec<_> = chunk
                .iter()
                .map(|&(i, c)| (i, &rays[i], &plans[i].fine, plans[i].fine_noise.as_slice(), c))
                .collect();
            let mut gc = coarse.zeros_like();
            let mut gf = fine.zeros_like();
            let coarse_nll = network_pass(coarse, &coarse_rays, scale, &mut gc)?;
            let fine_nll = network_pass(fine, &fine_rays, scale, &mut gf)?;
            Ok(ChunkResult {
                coarse_nll,
                fine_nll,
                coarse: gc,
                fine: gf,
            })
        })
        .collect::<Result<_>>()?;
    let (mut sum_c, mut sum_f) = (0.0, 0.0);
    for chunk in &chunks {
        sum_c += chunk.coarse_nll;
        sum_f += chunk.fine_nll;
        result.coarse.add_scaled(&chunk.coarse, F::one());
        result.fine.add_scaled(&chunk.fine, F::one());
    }
    let n = active.len() as f64;
    result.report.coarse = sum_c / n;
    result.report.fine = sum_f / n;
    result.report.total = result.report.coarse + result.report.fine;
    Ok(result)
}

/// Plans samples with `rngs` and differentiates the batch loss. Sample
/// positions are treated as constants.
pub fn loss_and_gradients<F: Real>(
    coarse: &FieldParams<F>,
    fine: &FieldParams<F>,
    rays: &[Ray],
    labels: &[u8],
    cfg: &TrainConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<Gradients<F>> {
    if labels.len() != rays.len() {
        return Err(invalid("rays and labels differ in length"));
    }
    let plans = plan_samples(coarse, rays, cfg, rngs)?;
    loss_and_gradients_fixed(coarse, fine, rays, &plans, labels, cfg.chunk_rays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = vec![vec![0.0f64, 1.0, 0.0]];
        let r = semantic_loss(&p, &p, &[1]).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn uniform_over_28_classes() {
        let p = vec![vec![1.0f64 / 28.0; 28]; 3];
        let r = semantic_loss(&p, &p, &[0, 5, 27]).unwrap();
        assert_abs_diff_eq!(r.total, 2.0 * 28f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.total, 6.6644, epsilon = 1e-4);
        assert_abs_diff_eq!(r.total, r.coarse + r.fine, epsilon = 1e-9);
    }

    #[test]
    fn all_void_batch() {
        let p = vec![vec![0.5f64, 0.5]; 4];
        let r = semantic_loss(&p, &p, &[VOID; 4]).unwrap();
        assert_eq!((r.total, r.masked), (0.0, 4));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let p = vec![vec![0.5f64, 0.5]];
        assert!(semantic_loss(&p, &p, &[2]).is_err());
    }

    #[test]
    fn zero_probability_is_clamped() {
        let p = vec![vec![1.0f64, 0.0]];
        let r = semantic_loss(&p, &p, &[1]).unwrap();
        assert_abs_diff_eq!(r.coarse, -LOG_CLAMP.ln(), epsilon = 1e-12);
    }
}
