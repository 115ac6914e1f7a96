//! Positional encoding and the density/semantic MLP.
//!
//! A point `x` (meters, world frame) is lifted by [`positional_encode`] and fed
//! through a ReLU trunk with one skip connection that re-injects the encoding.
//! Two heads read the trunk output: a scalar density (ReLU) and a small
//! semantic branch (ReLU hidden layer, linear logits). There is no color head
//! and no view-direction input.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Shape of one field network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub trunk_depth: usize,
    pub trunk_width: usize,
    /// 1-based trunk layer whose input is `[previous activations, encoding]`.
    pub skip_layer: usize,
    pub semantic_hidden_width: usize,
    pub num_classes: usize,
    pub encoding_levels: usize,
    pub include_raw_input: bool,
    /// Frequency count a view-direction branch would use. Not consumed:
    /// the network sees positions only.
    pub direction_levels: usize,
    /// World points are mapped to `(p - scene_center) / scene_half_extent`
    /// before encoding. The encoding has period 2 in every coordinate, so
    /// the scene must fit inside the unit cube after this map.
    #[serde(default)]
    pub scene_center: [f64; 3],
    #[serde(default = "unit_extent")]
    pub scene_half_extent: [f64; 3],
}

fn unit_extent() -> [f64; 3] {
    [1.0; 3]
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            trunk_depth: 8,
            trunk_width: 256,
            skip_layer: 5,
            semantic_hidden_width: 128,
            num_classes: 2,
            encoding_levels: 10,
            include_raw_input: false,
            direction_levels: 4,
            scene_center: [0.0; 3],
            scene_half_extent: unit_extent(),
        }
    }
}

impl FieldConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trunk_depth == 0 || self.trunk_width == 0 || self.semantic_hidden_width == 0 {
            return Err(Error::Config("network widths and depth must be positive".into()));
        }
        if self.skip_layer == 0 || self.skip_layer > self.trunk_depth {
            return Err(Error::Config(format!(
                "skip_layer {} outside 1..={}",
                self.skip_layer, self.trunk_depth
            )));
        }
        // 255 is the void code, so at most 255 real classes.
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::Config(format!(
                "num_classes {} outside 2..=255",
                self.num_classes
            )));
        }
        if self.encoding_levels == 0 {
            return Err(Error::Config("encoding_levels must be >= 1".into()));
        }
        if self.scene_center.iter().any(|c| !c.is_finite())
            || self.scene_half_extent.iter().any(|h| !(h.is_finite() && *h > 0.0))
        {
            return Err(Error::Config("scene normalisation must be finite with positive extent".into()));
        }
        Ok(())
    }

    /// World point in the network's normalised input frame.
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| (p[i] - self.scene_center[i]) / self.scene_half_extent[i])
    }

    pub fn encoded_dim(&self) -> usize {
        encoded_len(self.encoding_levels, self.include_raw_input)
    }

    /// Input width of trunk layer `index` (0-based).
    fn trunk_input_dim(&self, index: usize) -> usize {
        let base = if index == 0 {
            self.encoded_dim()
        } else {
            self.trunk_width
        };
        if index + 1 == self.skip_layer {
            base + self.encoded_dim()
        } else {
            base
        }
    }
}

pub fn encoded_len(levels: usize, include_raw: bool) -> usize {
    6 * levels + if include_raw { 3 } else { 0 }
}

/// Sinusoidal lifting of a 3-D point.
///
/// For each frequency `k` in `0..levels` and each coordinate `i` the pair
/// `(sin(2^k π x_i), cos(2^k π x_i))` is emitted, in that order. When
/// `include_raw` is set the raw coordinates come first.
pub fn positional_encode(x: [f64; 3], levels: usize, include_raw: bool) -> Result<Vec<f64>> {
    if levels == 0 {
        return Err(invalid("encoding needs at least one level"));
    }
    let mut out = vec![0.0; encoded_len(levels, include_raw)];
    encode_into(x, levels, include_raw, &mut out)?;
    Ok(out)
}

pub(crate) fn encode_into<F: Real>(
    x: [f64; 3],
    levels: usize,
    include_raw: bool,
    out: &mut [F],
) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("non-finite point {x:?}")));
    }
    debug_assert_eq!(out.len(), encoded_len(levels, include_raw));
    let mut j = 0;
    if include_raw {
        for v in x {
            out[j] = F::of(v);
            j += 1;
        }
    }
    let mut freq = std::f64::consts::PI;
    for _ in 0..levels {
        for v in x {
            let (s, c) = (freq * v).sin_cos();
            out[j] = F::of(s);
            out[j + 1] = F::of(c);
            j += 2;
        }
        freq *= 2.0;
    }
    Ok(())
}

/// Normalises and encodes a batch of world points into a
/// `points.len() × encoded_dim` matrix.
pub fn encode_batch<F: Real>(points: &[[f64; 3]], config: &FieldConfig) -> Result<Array2<F>> {
    let dim = config.encoded_dim();
    let mut out = Array2::<F>::zeros((points.len(), dim));
    for (row, p) in out.rows_mut().into_iter().zip(points) {
        let mut row = row;
        let slice = row.as_slice_mut().expect("standard layout");
        encode_into(config.normalize(*p), config.encoding_levels, config.include_raw_input, slice)?;
    }
    Ok(out)
}

/// Affine layer `y = x Wᵀ + b` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Linear<F> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, input: ArrayView2<F>) -> Array2<F> {
        let mut out = Array2::<F>::zeros((input.nrows(), self.weight.nrows()));
        out.rows_mut().into_iter().for_each(|mut r| r.assign(&self.bias));
        general_mat_mul(F::one(), &input, &self.weight.t(), F::one(), &mut out);
        out
    }

    /// Accumulates parameter gradients for upstream `d_out` and returns
    /// `d_input` when asked.
    fn backprop(
        &self,
        input: ArrayView2<F>,
        d_out: ArrayView2<F>,
        grad: &mut Linear<F>,
        want_input_grad: bool,
    ) -> Option<Array2<F>> {
        general_mat_mul(F::one(), &d_out.t(), &input, F::one(), &mut grad.weight);
        grad.bias += &d_out.sum_axis(Axis(0));
        want_input_grad.then(|| d_out.dot(&self.weight))
    }
}

/// Weights of one field network (coarse or fine).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams<F> {
    pub config: FieldConfig,
    pub trunk: Vec<Linear<F>>,
    pub density: Linear<F>,
    pub semantic_hidden: Linear<F>,
    pub semantic_head: Linear<F>,
}

/// Batched network output: one row per input point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOutput<F> {
    /// Non-negative density, 1/m.
    pub sigma: Array1<F>,
    /// Unbounded class scores, `n × num_classes`.
    pub logits: Array2<F>,
}

/// Activations retained by [`FieldParams::forward_cached`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    encoded: Array2<F>,
    hidden: Vec<Array2<F>>,
    semantic_hidden: Array2<F>,
    sigma: Array1<F>,
}

impl<F: Real> FieldParams<F> {
    pub fn zeros(config: &FieldConfig) -> Result<Self> {
        config.validate()?;
        let trunk = (0..config.trunk_depth)
            .map(|i| Linear::zeros(config.trunk_input_dim(i), config.trunk_width))
            .collect();
        Ok(Self {
            config: config.clone(),
            trunk,
            density: Linear::zeros(config.trunk_width, 1),
            semantic_hidden: Linear::zeros(config.trunk_width, config.semantic_hidden_width),
            semantic_head: Linear::zeros(config.semantic_hidden_width, config.num_classes),
        })
    }

    /// Uniform fan-in initialization, `|w| ≤ 1/√fan_in`, zero biases.
    pub fn init(config: &FieldConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in params.layers_mut() {
            let bound = 1.0 / (layer.weight.ncols() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| F::of(rng.random_range(-bound..bound)));
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Layers in canonical order: trunk (depth order), density, semantic
    /// hidden, semantic head.
    pub fn layers(&self) -> impl Iterator<Item = &Linear<F>> {
        self.trunk.iter().chain([
            &self.density,
            &self.semantic_hidden,
            &self.semantic_head,
        ])
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear<F>> {
        self.trunk.iter_mut().chain([
            &mut self.density,
            &mut self.semantic_hidden,
            &mut self.semantic_head,
        ])
    }

    pub fn layer_names(&self) -> Vec<String> {
        (0..self.trunk.len())
            .map(|i| format!("trunk.{i}"))
            .chain(["density", "semantic_hidden", "semantic_head"].map(String::from))
            .collect()
    }

    /// Flat `(name, shape, values)` view in storage order, weight before bias.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        self.layer_names()
            .into_iter()
            .zip(self.layers())
            .flat_map(|(name, layer)| {
                [
                    (
                        format!("{name}.weight"),
                        layer.weight.shape().to_vec(),
                        layer.weight.as_slice().expect("standard layout"),
                    ),
                    (
                        format!("{name}.bias"),
                        layer.bias.shape().to_vec(),
                        layer.bias.as_slice().expect("standard layout"),
                    ),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        self.layers_mut()
            .flat_map(|layer| {
                [
                    layer.weight.as_slice_mut().expect("standard layout"),
                    layer.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        for (dst, src) in self.layers_mut().zip(other.layers()) {
            dst.weight.scaled_add(scale, &src.weight);
            dst.bias.scaled_add(scale, &src.bias);
        }
    }

    /// Converts to another element type.
    pub fn cast<G: Real>(&self) -> FieldParams<G> {
        let conv = |l: &Linear<F>| Linear {
            weight: l.weight.mapv(|v| G::of(v.f64())),
            bias: l.bias.mapv(|v| G::of(v.f64())),
        };
        FieldParams {
            config: self.config.clone(),
            trunk: self.trunk.iter().map(conv).collect(),
            density: conv(&self.density),
            semantic_hidden: conv(&self.semantic_hidden),
            semantic_head: conv(&self.semantic_head),
        }
    }

    fn check_input(&self, encoded: &ArrayView2<F>) -> Result<()> {
        if encoded.ncols() != self.config.encoded_dim() {
            return Err(invalid(format!(
                "encoded width {} does not match network input {}",
                encoded.ncols(),
                self.config.encoded_dim()
            )));
        }
        Ok(())
    }

    fn layer_input(&self, index: usize, encoded: ArrayView2<F>, prev: ArrayView2<F>) -> Array2<F> {
        if index + 1 == self.config.skip_layer {
            concatenate(Axis(1), &[prev, encoded]).expect("row counts agree")
        } else {
            prev.to_owned()
        }
    }

    fn run(
        &self,
        encoded: ArrayView2<F>,
        density_noise: Option<ArrayView1<F>>,
        keep: bool,
    ) -> (FieldOutput<F>, Option<ForwardCache<F>>) {
        let relu = |v: F| v.max(F::zero());
        let mut hidden: Vec<Array2<F>> = Vec::with_capacity(if keep { self.trunk.len() } else { 0 });
        let mut current: Option<Array2<F>> = None;
        for (i, layer) in self.trunk.iter().enumerate() {
            let mut z = {
                let prev = current.as_ref().map_or(encoded, |h| h.view());
                if i + 1 == self.config.skip_layer {
                    layer.apply(self.layer_input(i, encoded, prev).view())
                } else {
                    layer.apply(prev)
                }
            };
            z.mapv_inplace(relu);
            if keep {
                if let Some(h) = current.take() {
                    hidden.push(h);
                }
            }
            current = Some(z);
        }
        let trunk_out = current.expect("trunk depth >= 1");

        let mut sigma = self.density.apply(trunk_out.view()).index_axis_move(Axis(1), 0);
        if let Some(noise) = density_noise {
            sigma += &noise;
        }
        sigma.mapv_inplace(relu);
        let mut sem = self.semantic_hidden.apply(trunk_out.view());
        sem.mapv_inplace(relu);
        let logits = self.semantic_head.apply(sem.view());

        let out = FieldOutput {
            sigma: sigma.clone(),
            logits,
        };
        let cache = keep.then(|| {
            hidden.push(trunk_out);
            ForwardCache {
                encoded: encoded.to_owned(),
                hidden,
                semantic_hidden: sem,
                sigma,
            }
        });
        (out, cache)
    }

    /// Evaluates the network on a batch of encoded points.
    pub fn forward(&self, encoded: ArrayView2<F>) -> Result<FieldOutput<F>> {
        self.check_input(&encoded)?;
        Ok(self.run(encoded, None, false).0)
    }

    /// Like [`forward`](Self::forward) but keeps activations for [`backward`](Self::backward).
    pub fn forward_cached(&self, encoded: ArrayView2<F>) -> Result<(FieldOutput<F>, ForwardCache<F>)> {
        self.forward_cached_noisy(encoded, None)
    }

    /// Cached forward pass with additive noise on the density pre-activation.
    pub fn forward_cached_noisy(
        &self,
        encoded: ArrayView2<F>,
        density_noise: Option<ArrayView1<F>>,
    ) -> Result<(FieldOutput<F>, ForwardCache<F>)> {
        self.check_input(&encoded)?;
        if let Some(n) = &density_noise {
            if n.len() != encoded.nrows() {
                return Err(invalid("one density noise value per point required"));
            }
        }
        let (out, cache) = self.run(encoded, density_noise, true);
        Ok((out, cache.expect("cache requested")))
    }

    /// Accumulates `∂L/∂θ` into `grads` given upstream gradients on the
    /// outputs of the matching `forward_cached` call.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        d_sigma: ArrayView1<F>,
        d_logits: ArrayView2<F>,
        grads: &mut FieldParams<F>,
    ) {
        let zero = F::zero();
        let trunk_out = cache.hidden.last().expect("trunk depth >= 1");

        let mut d_sem = self
            .semantic_head
            .backprop(cache.semantic_hidden.view(), d_logits, &mut grads.semantic_head, true)
            .expect("input grad requested");
        Zip::from(&mut d_sem)
            .and(&cache.semantic_hidden)
            .for_each(|d, &h| {
                if h <= zero {
                    *d = zero
                }
            });
        let mut d_h = self
            .semantic_hidden
            .backprop(trunk_out.view(), d_sem.view(), &mut grads.semantic_hidden, true)
            .expect("input grad requested");

        let mut d_pre = d_sigma.to_owned();
        Zip::from(&mut d_pre).and(&cache.sigma).for_each(|d, &s| {
            if s <= zero {
                *d = zero
            }
        });
        let d_pre = d_pre.insert_axis(Axis(1));
        d_h += &self
            .density
            .backprop(trunk_out.view(), d_pre.view(), &mut grads.density, true)
            .expect("input grad requested");

        let width = self.config.trunk_width;
        for i in (0..self.trunk.len()).rev() {
            Zip::from(&mut d_h).and(&cache.hidden[i]).for_each(|d, &h| {
                if h <= zero {
                    *d = zero
                }
            });
            let prev = if i == 0 {
                cache.encoded.view()
            } else {
                cache.hidden[i - 1].view()
            };
            let widened;
            let input = if i + 1 == self.config.skip_layer {
                widened = self.layer_input(i, cache.encoded.view(), prev);
                widened.view()
            } else {
                prev
            };
            let d_in = self.trunk[i].backprop(input, d_h.view(), &mut grads.trunk[i], i > 0);
            if let Some(d_in) = d_in {
                d_h = if i + 1 == self.config.skip_layer {
                    d_in.slice(s![.., ..width]).to_owned()
                } else {
                    d_in
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny() -> FieldConfig {
        FieldConfig {
            trunk_depth: 3,
            trunk_width: 8,
            skip_layer: 2,
            semantic_hidden_width: 4,
            num_classes: 3,
            encoding_levels: 2,
            include_raw_input: false,
            direction_levels: 4,
            ..FieldConfig::default()
        }
    }

    #[test]
    fn normalisation_is_applied_before_encoding() {
        let cfg = FieldConfig {
            scene_center: [1.0, 0.0, 0.0],
            scene_half_extent: [2.0, 1.0, 1.0],
            ..tiny()
        };
        let e = encode_batch::<f64>(&[[2.0, 0.0, 0.0]], &cfg).unwrap();
        let want = positional_encode([0.5, 0.0, 0.0], 2, false).unwrap();
        assert_eq!(e.row(0).to_vec(), want);
        assert!(FieldConfig { scene_half_extent: [0.0, 1.0, 1.0], ..tiny() }.validate().is_err());
    }

    #[test]
    fn encode_origin() {
        let e = positional_encode([0.0; 3], 2, false).unwrap();
        assert_eq!(e, vec![0., 1., 0., 1., 0., 1., 0., 1., 0., 1., 0., 1.]);
    }

    #[test]
    fn encode_quarter_turn() {
        let e = positional_encode([0.5, 0.0, 0.0], 1, false).unwrap();
        let want = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        for (a, b) in e.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn encode_lengths_and_raw_prefix() {
        assert_eq!(positional_encode([0.3, -1.0, 2.0], 10, false).unwrap().len(), 60);
        let e = positional_encode([0.3, -1.0, 2.0], 10, true).unwrap();
        assert_eq!(e.len(), 63);
        assert_eq!(&e[..3], &[0.3, -1.0, 2.0]);
    }

    #[test]
    fn encode_rejects_nan_and_zero_levels() {
        assert!(positional_encode([f64::NAN, 0.0, 0.0], 2, false).is_err());
        assert!(positional_encode([0.0; 3], 0, false).is_err());
    }

    #[test]
    fn init_shapes_follow_config() {
        let p = FieldParams::<f32>::init(&FieldConfig::with_classes(28), 1).unwrap();
        assert_eq!(p.trunk[0].weight.shape(), &[256, 60]);
        assert_eq!(p.trunk[4].weight.shape(), &[256, 256 + 60]);
        assert_eq!(p.trunk[5].weight.shape(), &[256, 256]);
        assert_eq!(p.density.weight.shape(), &[1, 256]);
        assert_eq!(p.semantic_hidden.weight.shape(), &[128, 256]);
        assert_eq!(p.semantic_head.weight.shape(), &[28, 128]);
        assert!(p.layers().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let bound = 1.0 / 60f32.sqrt();
        assert!(p.trunk[0].weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_is_seeded() {
        let a = FieldParams::<f32>::init(&tiny(), 7).unwrap();
        let b = FieldParams::<f32>::init(&tiny(), 7).unwrap();
        let c = FieldParams::<f32>::init(&tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = tiny();
        cfg.skip_layer = 4;
        assert!(FieldParams::<f32>::zeros(&cfg).is_err());
        cfg.skip_layer = 0;
        assert!(FieldParams::<f32>::zeros(&cfg).is_err());
        let mut cfg = tiny();
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = FieldParams::<f64>::zeros(&tiny()).unwrap();
        let x = encode_batch::<f64>(&[[0.2, 0.3, -0.1], [1.0, 2.0, 3.0]], &tiny()).unwrap();
        let out = p.forward(x.view()).unwrap();
        assert!(out.sigma.iter().all(|&s| s == 0.0));
        assert!(out.logits.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn negative_density_preactivation_clamps() {
        let mut p = FieldParams::<f64>::init(&tiny(), 3).unwrap();
        p.density.weight.fill(0.0);
        p.density.bias[0] = -2.0;
        let x = encode_batch::<f64>(&[[0.1, 0.2, 0.3]], &tiny()).unwrap();
        assert_eq!(p.forward(x.view()).unwrap().sigma[0], 0.0);
    }

    #[test]
    fn wrong_input_width_rejected() {
        let p = FieldParams::<f32>::zeros(&tiny()).unwrap();
        let x = Array2::<f32>::zeros((2, 5));
        assert!(p.forward(x.view()).is_err());
    }

    #[test]
    fn batch_matches_rows() {
        let cfg = FieldConfig::with_classes(5);
        let p = FieldParams::<f32>::init(&cfg, 11).unwrap();
        let pts: Vec<[f64; 3]> = (0..37)
            .map(|i| {
                let t = i as f64 * 0.173;
                [t.sin(), t.cos() * 2.0, t * 0.1 - 1.0]
            })
            .collect();
        let x = encode_batch::<f32>(&pts, &cfg).unwrap();
        let batch = p.forward(x.view()).unwrap();
        for i in 0..pts.len() {
            let row = p.forward(x.slice(s![i..i + 1, ..])).unwrap();
            assert_eq!(row.sigma[0], batch.sigma[i]);
            assert_eq!(row.logits.row(0), batch.logits.row(i));
        }
    }

    #[test]
    fn semantic_head_row_permutation_permutes_logits() {
        let cfg = tiny();
        let p = FieldParams::<f64>::init(&cfg, 5).unwrap();
        let mut q = p.clone();
        let perm = [2usize, 0, 1];
        for (dst, &src) in perm.iter().enumerate() {
            q.semantic_head
                .weight
                .row_mut(dst)
                .assign(&p.semantic_head.weight.row(src));
            q.semantic_head.bias[dst] = p.semantic_head.bias[src] + 0.0;
        }
        let x = encode_batch::<f64>(&[[0.4, -0.2, 0.9], [0.0, 0.5, 0.5]], &cfg).unwrap();
        let a = p.forward(x.view()).unwrap();
        let b = q.forward(x.view()).unwrap();
        for r in 0..2 {
            for (dst, &src) in perm.iter().enumerate() {
                assert_eq!(b.logits[[r, dst]], a.logits[[r, src]]);
            }
        }
    }

    #[test]
    fn cached_forward_matches_plain() {
        let cfg = tiny();
        let p = FieldParams::<f64>::init(&cfg, 9).unwrap();
        let x = encode_batch::<f64>(&[[0.4, -0.2, 0.9], [0.0, 0.5, 0.5]], &cfg).unwrap();
        let (a, _) = p.forward_cached(x.view()).unwrap();
        assert_eq!(a, p.forward(x.view()).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Scalar objective L = Σ a_n σ_n + Σ b_nc logits_nc with fixed random a, b.
        let cfg = tiny();
        let mut p = FieldParams::<f64>::init(&cfg, 21).unwrap();
        for l in p.layers_mut() {
            l.bias.mapv_inplace(|_| 0.05);
        }
        let pts = [[0.1, 0.2, 0.3], [-0.4, 0.25, 0.05], [0.33, -0.7, 0.6]];
        let x = encode_batch::<f64>(&pts, &cfg).unwrap();
        let a = Array1::from(vec![0.7, -0.3, 1.1]);
        let b = Array2::from_shape_fn((3, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let objective = |q: &FieldParams<f64>| {
            let o = q.forward(x.view()).unwrap();
            o.sigma.dot(&a) + (&o.logits * &b).sum()
        };
        let (_, cache) = p.forward_cached(x.view()).unwrap();
        let mut g = p.zeros_like();
        p.backward(&cache, a.view(), b.view(), &mut g);

        let analytic: Vec<f64> = g
            .tensors()
            .iter()
            .flat_map(|(_, _, v)| v.to_vec())
            .collect();
        let h = 1e-6;
        let mut k = 0;
        let n_tensors = p.tensors().len();
        for t in 0..n_tensors {
            let len = p.tensors()[t].2.len();
            for j in 0..len {
                let orig = p.tensors_mut()[t][j];
                p.tensors_mut()[t][j] = orig + h;
                let up = objective(&p);
                p.tensors_mut()[t][j] = orig - h;
                let down = objective(&p);
                p.tensors_mut()[t][j] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - analytic[k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "coordinate {k}: fd {fd} vs analytic {}",
                    analytic[k]
                );
                k += 1;
            }
        }
    }
}
