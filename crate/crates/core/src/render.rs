//! Camera rays, sample placement along rays and volume compositing of
//! density + semantic logits.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{encode_batch, FieldParams};
use crate::scalar::Real;

/// Added to every coarse weight before building the sampling PDF.
pub const PDF_EPSILON: f64 = 1e-5;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid("focal lengths must be positive"));
        }
        Ok(())
    }

    /// Intrinsics for the same camera rendered at another resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Camera-to-world rigid transform. Camera frame: x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if !(ortho <= 1e-6 && (det - 1.0).abs() <= 1e-6) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(invalid(format!(
                "pose rotation not proper orthonormal (orthogonality error {ortho:.3e}, det {det:.6})"
            )));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` the world up direction.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("look-at target coincides with eye"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("view direction parallel to up"))?;
        let down = forward.cross(&right);
        Self::new(Matrix3::from_columns(&[right, down, forward]), eye)
    }

    /// Parses a row-major 4×4 camera-to-world matrix.
    pub fn from_row_major(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(invalid(format!("pose needs 16 numbers, got {}", m.len())));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }
}

/// `o + t·d` for `t ∈ [t_near, t_far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>, t_near: f64, t_far: f64) -> Result<Self> {
        let direction = direction
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("zero ray direction"))?;
        if !(0.0 < t_near && t_near < t_far && t_far.is_finite()) {
            return Err(invalid(format!("ray bounds ({t_near}, {t_far}) need 0 < near < far")));
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        let p = self.origin + self.direction * t;
        [p.x, p.y, p.z]
    }
}

/// Ray through the center of pixel `(px, py)`.
pub fn generate_ray(
    intr: &CameraIntrinsics,
    pose: &Pose,
    px: usize,
    py: usize,
    bounds: (f64, f64),
) -> Result<Ray> {
    if px >= intr.width || py >= intr.height {
        return Err(invalid(format!(
            "pixel ({px}, {py}) outside {}×{}",
            intr.width, intr.height
        )));
    }
    let cam = Vector3::new(
        (px as f64 + 0.5 - intr.cx) / intr.fx,
        (py as f64 + 0.5 - intr.cy) / intr.fy,
        1.0,
    );
    Ray::new(pose.translation, pose.rotation * cam, bounds.0, bounds.1)
}

/// Ascending distances along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub t: Vec<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn positions(&self, ray: &Ray) -> Vec<[f64; 3]> {
        self.t.iter().map(|&t| ray.at(t)).collect()
    }

    /// Interval lengths; the last interval runs to `t_far`.
    pub fn deltas(&self) -> Vec<f64> {
        let n = self.t.len();
        (0..n)
            .map(|i| {
                let next = if i + 1 < n { self.t[i + 1] } else { self.t_far };
                next - self.t[i]
            })
            .collect()
    }
}

/// Splits `[t_near, t_far]` into `n` equal bins and takes one sample per bin:
/// the midpoint, or a uniform draw when `perturb` is set.
pub fn stratified_samples(ray: &Ray, n: usize, perturb: bool, rng: &mut impl Rng) -> Result<SampleSet> {
    if n == 0 {
        return Err(invalid("need at least one coarse sample"));
    }
    let width = (ray.t_far - ray.t_near) / n as f64;
    let t = (0..n)
        .map(|i| {
            let u = if perturb { rng.random::<f64>() } else { 0.5 };
            ray.t_near + (i as f64 + u) * width
        })
        .collect();
    Ok(SampleSet {
        t,
        t_near: ray.t_near,
        t_far: ray.t_far,
    })
}

/// Inverse-transform sampling of the piecewise-constant PDF defined by
/// `weights` over the equal bins that produced `coarse`, merged with the
/// coarse samples and sorted.
///
/// Without `perturb` the CDF is inverted at `(i + 0.5) / n_fine`.
pub fn importance_samples(
    coarse: &SampleSet,
    weights: &[f64],
    n_fine: usize,
    perturb: bool,
    rng: &mut impl Rng,
) -> Result<SampleSet> {
    let n = coarse.len();
    if weights.len() != n || n == 0 {
        return Err(invalid(format!(
            "{} weights for {} coarse samples",
            weights.len(),
            n
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(invalid("sampling weights must be finite and non-negative"));
    }
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in weights {
        acc += w + PDF_EPSILON;
        cdf.push(acc);
    }
    for c in cdf.iter_mut() {
        *c /= acc;
    }
    cdf[n] = 1.0;

    let width = (coarse.t_far - coarse.t_near) / n as f64;
    let mut t = coarse.t.clone();
    t.reserve(n_fine);
    for i in 0..n_fine {
        let u = if perturb {
            rng.random::<f64>()
        } else {
            (i as f64 + 0.5) / n_fine as f64
        };
        // First bin whose upper CDF edge exceeds u.
        let bin = cdf[1..].partition_point(|&c| c <= u).min(n - 1);
        let (lo, hi) = (cdf[bin], cdf[bin + 1]);
        let frac = if hi > lo { ((u - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
        let x = coarse.t_near + (bin as f64 + frac) * width;
        t.push(x.clamp(coarse.t_near, coarse.t_far));
    }
    t.sort_by(f64::total_cmp);
    Ok(SampleSet {
        t,
        t_near: coarse.t_near,
        t_far: coarse.t_far,
    })
}

/// Composited result of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<F> {
    pub class_probs: Vec<F>,
    pub rendered_logits: Vec<F>,
    pub weights: Vec<F>,
    pub transmittance: Vec<F>,
    pub alpha: Vec<F>,
    pub opacity: F,
}

impl<F: Real> RenderOutput<F> {
    /// Index of the most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.class_probs)
    }
}

pub(crate) fn argmax<F: PartialOrd + Copy>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_lengths<F>(sigma: &[F], logits: &ArrayView2<F>, samples: &SampleSet) -> Result<()> {
    if sigma.is_empty() || sigma.len() != logits.nrows() || sigma.len() != samples.len() {
        return Err(invalid(format!(
            "compositing length mismatch: {} densities, {} logit rows, {} samples",
            sigma.len(),
            logits.nrows(),
            samples.len()
        )));
    }
    Ok(())
}

/// Alpha-composites per-sample logits, then applies a softmax.
pub fn composite<F: Real>(
    sigma: &[F],
    logits: ArrayView2<F>,
    samples: &SampleSet,
) -> Result<RenderOutput<F>> {
    check_lengths(sigma, &logits, samples)?;
    composite_intervals(sigma, logits, &samples.deltas())
}

/// [`composite`] over explicit interval lengths: sample `i` has density
/// `sigma[i]` over a segment of length `deltas[i]`.
pub fn composite_intervals<F: Real>(
    sigma: &[F],
    logits: ArrayView2<F>,
    deltas: &[f64],
) -> Result<RenderOutput<F>> {
    if sigma.is_empty() || sigma.len() != logits.nrows() || sigma.len() != deltas.len() {
        return Err(invalid(format!(
            "compositing length mismatch: {} densities, {} logit rows, {} intervals",
            sigma.len(),
            logits.nrows(),
            deltas.len()
        )));
    }
    if sigma.iter().any(|s| *s < F::zero() || !s.is_finite()) {
        return Err(invalid("densities must be finite and non-negative"));
    }
    if deltas.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(invalid("interval lengths must be finite and non-negative"));
    }
    let n = sigma.len();
    let mut alpha = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n);
    let mut rendered = vec![F::zero(); logits.ncols()];
    let mut trans = F::one();
    for i in 0..n {
        let a = F::one() - (-sigma[i] * F::of(deltas[i])).exp();
        let w = (trans * a).flush();
        for (r, &l) in rendered.iter_mut().zip(logits.row(i)) {
            *r += w * l;
        }
        alpha.push(a);
        weights.push(w);
        transmittance.push(trans);
        trans = (trans * (F::one() - a)).flush();
    }
    let opacity = weights.iter().copied().sum();
    Ok(RenderOutput {
        class_probs: softmax(&rendered),
        rendered_logits: rendered,
        weights,
        transmittance,
        alpha,
        opacity,
    })
}

/// Reverse-mode pass through [`composite`] (before the softmax).
///
/// Given `∂L/∂rendered_logits`, returns `(∂L/∂σ, ∂L/∂logits)`. Sample
/// positions are constants.
pub fn composite_backward<F: Real>(
    sigma: &[F],
    logits: ArrayView2<F>,
    samples: &SampleSet,
    out: &RenderOutput<F>,
    d_rendered: &[F],
) -> (Vec<F>, Array2<F>) {
    let n = sigma.len();
    let deltas = samples.deltas();
    let mut d_logits = Array2::<F>::zeros(logits.raw_dim());
    // g_n = ∂L/∂w_n
    let mut g = vec![F::zero(); n];
    for i in 0..n {
        let w = out.weights[i];
        let mut gi = F::zero();
        for ((dl, &l), &dr) in d_logits.row_mut(i).iter_mut().zip(logits.row(i)).zip(d_rendered) {
            *dl = (w * dr).flush();
            gi += l * dr;
        }
        g[i] = gi;
    }
    // ∂w_n/∂σ_k = δ_k T_{k+1}      (n = k)
    //           = -δ_k w_n          (n > k)
    let mut d_sigma = vec![F::zero(); n];
    let mut suffix = F::zero();
    for k in (0..n).rev() {
        let t_next = out.transmittance[k] * (F::one() - out.alpha[k]);
        d_sigma[k] = (F::of(deltas[k]) * (t_next * g[k] - suffix)).flush();
        suffix += out.weights[k] * g[k];
    }
    (d_sigma, d_logits)
}

/// Sample counts of the two-pass renderer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub perturb: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_fine: 128,
            perturb: true,
        }
    }
}

/// Coarse and fine composites of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelRender<F> {
    pub coarse: RenderOutput<F>,
    pub fine: RenderOutput<F>,
    pub fine_samples: usize,
}

/// Independent random stream keyed by `(seed, key...)`, so per-ray draws do
/// not depend on evaluation order.
pub fn ray_stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ 0x5EF1_E1D5_0000_0001);
    for &k in key {
        h = splitmix(h ^ k);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn eval_samples<F: Real>(
    params: &FieldParams<F>,
    rays: &[Ray],
    sets: &[SampleSet],
) -> Result<Vec<RenderOutput<F>>> {
    let points: Vec<[f64; 3]> = rays
        .iter()
        .zip(sets)
        .flat_map(|(r, s)| s.positions(r))
        .collect();
    let encoded = encode_batch::<F>(&points, &params.config)?;
    let out = params.forward(encoded.view())?;
    let sigma = out.sigma.as_slice().expect("contiguous");
    let mut offset = 0;
    sets.iter()
        .map(|s| {
            let range = offset..offset + s.len();
            offset += s.len();
            composite(
                &sigma[range.clone()],
                out.logits.slice(ndarray::s![range, ..]),
                s,
            )
        })
        .collect()
}

/// Two-pass render of a batch of rays. `rngs[i]` drives ray `i`.
pub fn render_rays<F: Real>(
    coarse: &FieldParams<F>,
    fine: &FieldParams<F>,
    rays: &[Ray],
    cfg: &SamplingConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<PixelRender<F>>> {
    if rngs.len() != rays.len() {
        return Err(invalid("one random stream per ray required"));
    }
    let coarse_sets = rays
        .iter()
        .zip(rngs.iter_mut())
        .map(|(r, rng)| stratified_samples(r, cfg.n_coarse, cfg.perturb, rng))
        .collect::<Result<Vec<_>>>()?;
    let coarse_out = eval_samples(coarse, rays, &coarse_sets)?;
    let fine_sets = coarse_sets
        .iter()
        .zip(&coarse_out)
        .zip(rngs.iter_mut())
        .map(|((set, out), rng)| {
            let w: Vec<f64> = out.weights.iter().map(|w| w.f64()).collect();
            importance_samples(set, &w, cfg.n_fine, cfg.perturb, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let fine_out = eval_samples(fine, rays, &fine_sets)?;
    Ok(coarse_out
        .into_iter()
        .zip(fine_out)
        .zip(&fine_sets)
        .map(|((c, f), s)| PixelRender {
            coarse: c,
            fine: f,
            fine_samples: s.len(),
        })
        .collect())
}

/// Renders a single ray through both networks.
pub fn render_pixel<F: Real>(
    coarse: &FieldParams<F>,
    fine: &FieldParams<F>,
    ray: &Ray,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(RenderOutput<F>, RenderOutput<F>)> {
    let mut rngs = [rng.clone()];
    let mut out = render_rays(coarse, fine, std::slice::from_ref(ray), cfg, &mut rngs)?;
    *rng = rngs[0].clone();
    let px = out.pop().expect("one ray in, one render out");
    Ok((px.coarse, px.fine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            width: 320,
            height: 240,
            fx: 100.0,
            fy: 100.0,
            cx: 160.5,
            cy: 120.5,
        }
    }

    fn forward_ray(near: f64, far: f64) -> Ray {
        Ray::new(Vector3::zeros(), Vector3::z(), near, far).unwrap()
    }

    #[test]
    fn principal_ray_is_optical_axis() {
        let r = generate_ray(&intr(), &Pose::identity(), 160, 120, (0.1, 10.0)).unwrap();
        assert_abs_diff_eq!(r.direction, Vector3::z(), epsilon = 1e-15);
        assert_eq!((r.t_near, r.t_far), (0.1, 10.0));
    }

    #[test]
    fn off_axis_ray_at_45_degrees() {
        let r = generate_ray(&intr(), &Pose::identity(), 260, 120, (0.1, 10.0)).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(r.direction, Vector3::new(s, 0.0, s), epsilon = 1e-12);
        assert_abs_diff_eq!(r.direction.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_origin_and_rotation_follow_pose() {
        let eye = Vector3::new(1.0, -2.0, 0.5);
        let pose = Pose::look_at(eye, Vector3::new(4.0, -2.0, 0.5), Vector3::y()).unwrap();
        let r = generate_ray(&intr(), &pose, 160, 120, (0.1, 10.0)).unwrap();
        assert_eq!(r.origin, eye);
        assert_abs_diff_eq!(r.direction, Vector3::x(), epsilon = 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        assert!(generate_ray(&intr(), &Pose::identity(), 320, 0, (0.1, 10.0)).is_err());
        assert!(generate_ray(&intr(), &Pose::identity(), 0, 240, (0.1, 10.0)).is_err());
    }

    #[test]
    fn pose_round_trips_row_major() {
        let pose = Pose::look_at(
            Vector3::new(0.3, 1.0, -2.0),
            Vector3::new(0.0, 0.5, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        let back = Pose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(pose, back);
        let mut bad = pose.to_row_major();
        bad[0] *= 2.0;
        assert!(Pose::from_row_major(&bad).is_err());
    }

    #[test]
    fn stratified_midpoints() {
        let s = stratified_samples(&forward_ray(0.1, 10.0), 4, false, &mut rng()).unwrap();
        for (a, b) in s.t.iter().zip([1.3375, 3.8125, 6.2875, 8.7625]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let one = stratified_samples(&forward_ray(0.1, 10.0), 1, false, &mut rng()).unwrap();
        assert_abs_diff_eq!(one.t[0], 5.05, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_weights_concentrate_fine_samples() {
        let ray = forward_ray(0.1, 10.0);
        let coarse = stratified_samples(&ray, 4, false, &mut rng()).unwrap();
        let fine = importance_samples(&coarse, &[0.0, 1.0, 0.0, 0.0], 1000, true, &mut rng()).unwrap();
        assert_eq!(fine.len(), 1004);
        let (lo, hi) = (0.1 + 2.475, 0.1 + 2.0 * 2.475);
        let outside = fine
            .t
            .iter()
            .filter(|t| !(lo..=hi).contains(*t))
            .count()
            - 3; // the three coarse samples outside bin 2
        assert!(outside < 10, "{outside} fine samples leaked");
    }

    #[test]
    fn all_zero_weights_fall_back_to_uniform() {
        let ray = forward_ray(1.0, 2.0);
        let coarse = stratified_samples(&ray, 8, false, &mut rng()).unwrap();
        let fine = importance_samples(&coarse, &[0.0; 8], 16, false, &mut rng()).unwrap();
        assert_eq!(fine.len(), 24);
        assert!(fine.t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn composite_empty_space_is_uniform() {
        let set = SampleSet { t: vec![1.0, 2.0, 3.0], t_near: 0.5, t_far: 4.0 };
        let logits = Array2::<f64>::from_elem((3, 4), 0.7);
        let out = composite(&[0.0, 0.0, 0.0], logits.view(), &set).unwrap();
        assert!(out.weights.iter().all(|&w| w == 0.0));
        assert_eq!(out.opacity, 0.0);
        assert!(out.rendered_logits.iter().all(|&l| l == 0.0));
        assert!(out.class_probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn composite_single_sample_half_alpha() {
        let set = SampleSet { t: vec![1.0], t_near: 0.5, t_far: 2.0 };
        let sigma = [std::f64::consts::LN_2];
        let out = composite(&sigma, array![[2.0, 0.0]].view(), &set).unwrap();
        assert_abs_diff_eq!(out.weights[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out.rendered_logits[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.class_probs[0], 0.7310585786300049, epsilon = 1e-12);
        assert_abs_diff_eq!(out.class_probs[1], 0.2689414213699951, epsilon = 1e-12);
        assert_eq!(out.transmittance[0], 1.0);

        let out = composite(&[1.0], array![[0.0, 0.0]].view(), &set).unwrap();
        assert_abs_diff_eq!(out.weights[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(out.weights[0], 0.63212, epsilon = 1e-5);
    }

    #[test]
    fn composite_rejects_mismatch_and_negative_density() {
        let set = SampleSet { t: vec![1.0, 2.0], t_near: 0.5, t_far: 3.0 };
        assert!(composite(&[0.1], array![[0.0, 0.0]].view(), &set).is_err());
        assert!(composite(&[0.1, -0.1], array![[0.0, 0.0], [1.0, 1.0]].view(), &set).is_err());
    }

    #[test]
    fn composite_backward_matches_finite_differences() {
        let set = SampleSet { t: vec![0.3, 0.9, 1.4, 2.2], t_near: 0.2, t_far: 3.0 };
        let sigma = vec![0.4, 1.3, 0.2, 2.5];
        let logits = array![[0.5, -1.0, 0.3], [1.5, 0.2, -0.7], [-0.3, 0.8, 0.1], [0.0, 1.1, -0.4]];
        let d_r = [0.3, -0.8, 0.5];
        let f = |s: &[f64], l: &Array2<f64>| {
            let o = composite(s, l.view(), &set).unwrap();
            o.rendered_logits.iter().zip(d_r).map(|(a, b)| a * b).sum::<f64>()
        };
        let out = composite(&sigma, logits.view(), &set).unwrap();
        let (ds, dl) = composite_backward(&sigma, logits.view(), &set, &out, &d_r);
        let h = 1e-6;
        for k in 0..4 {
            let mut up = sigma.clone();
            up[k] += h;
            let mut dn = sigma.clone();
            dn[k] -= h;
            assert_abs_diff_eq!((f(&up, &logits) - f(&dn, &logits)) / (2.0 * h), ds[k], epsilon = 1e-8);
            for c in 0..3 {
                let mut up = logits.clone();
                up[[k, c]] += h;
                let mut dn = logits.clone();
                dn[[k, c]] -= h;
                assert_abs_diff_eq!((f(&sigma, &up) - f(&sigma, &dn)) / (2.0 * h), dl[[k, c]], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn zero_networks_render_uniform_and_count_merged_samples() {
        let cfg = FieldConfig {
            trunk_width: 16,
            semantic_hidden_width: 8,
            num_classes: 4,
            ..FieldConfig::default()
        };
        let p = FieldParams::<f32>::zeros(&cfg).unwrap();
        let ray = forward_ray(0.1, 10.0);
        let sc = SamplingConfig { n_coarse: 64, n_fine: 128, perturb: false };
        let mut streams = [ray_stream(0, &[1])];
        let out = render_rays(&p, &p, &[ray], &sc, &mut streams).unwrap();
        assert_eq!(out[0].fine_samples, 192);
        assert_eq!(out[0].fine.weights.len(), 192);
        assert!(out[0].coarse.class_probs.iter().all(|&q| q == 0.25));
        assert!(out[0].fine.class_probs.iter().all(|&q| q == 0.25));
    }

    #[test]
    fn deterministic_render_repeats_bitwise() {
        let cfg = FieldConfig {
            trunk_width: 16,
            semantic_hidden_width: 8,
            num_classes: 3,
            ..FieldConfig::default()
        };
        let c = FieldParams::<f32>::init(&cfg, 1).unwrap();
        let f = FieldParams::<f32>::init(&cfg, 2).unwrap();
        let ray = forward_ray(0.1, 10.0);
        let sc = SamplingConfig { n_coarse: 16, n_fine: 32, perturb: false };
        let a = render_pixel(&c, &f, &ray, &sc, &mut ray_stream(3, &[0, 1, 2])).unwrap();
        let b = render_pixel(&c, &f, &ray, &sc, &mut ray_stream(3, &[0, 1, 2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.25f32, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
