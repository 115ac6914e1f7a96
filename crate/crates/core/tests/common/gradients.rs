//! Analytic gradients of the full coarse+fine loss against central
//! finite differences in f64.

use nalgebra::Vector3;
use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semnerf::field::{encode_batch, FieldConfig, FieldParams};
use semnerf::render::{stratified_samples, Ray};
use semnerf::train::{loss_and_gradients_fixed, RayPlan};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-5;
/// Instances with a ReLU pre-activation closer than this to zero are redrawn:
/// a step of `H` in one parameter can carry such a unit across its kink.
const KINK_MARGIN: f64 = 1e-3;

pub struct Instance {
    pub coarse: FieldParams<f64>,
    pub fine: FieldParams<f64>,
    pub rays: Vec<Ray>,
    pub plans: Vec<RayPlan>,
    pub labels: Vec<u8>,
}

fn tiny_config() -> FieldConfig {
    FieldConfig {
        trunk_depth: 2,
        trunk_width: 8,
        skip_layer: 2,
        semantic_hidden_width: 8,
        encoding_levels: 2,
        ..FieldConfig::with_classes(3)
    }
}

pub fn instance(seed: u64) -> Instance {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coarse = FieldParams::<f64>::init(&cfg, rng.random()).unwrap();
    let mut fine = FieldParams::<f64>::init(&cfg, rng.random()).unwrap();
    // Zero biases put rows with a fully inactive trunk exactly on a ReLU
    // kink, where central differences are meaningless; random biases do not.
    for net in [&mut coarse, &mut fine] {
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
        net.density.bias[0] = 0.5;
    }
    let mut rays = Vec::new();
    let mut plans = Vec::new();
    for _ in 0..4 {
        let o = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0));
        let ray = Ray::new(o, d, 0.05, 1.5).unwrap();
        plans.push(RayPlan {
            coarse: stratified_samples(&ray, 4, true, &mut rng).unwrap(),
            fine: stratified_samples(&ray, 4, true, &mut rng).unwrap(),
            coarse_noise: Vec::new(),
            fine_noise: Vec::new(),
        });
        rays.push(ray);
    }
    let labels = (0..4).map(|_| rng.random_range(0..3u8)).collect();
    Instance {
        coarse,
        fine,
        rays,
        plans,
        labels,
    }
}

/// Smallest |pre-activation| of every ReLU unit over all sample points.
fn kink_distance(net: &FieldParams<f64>, points: &[[f64; 3]]) -> f64 {
    let enc = encode_batch::<f64>(points, &net.config).unwrap();
    let affine = |x: &Array2<f64>, l: &semnerf::field::Linear<f64>| x.dot(&l.weight.t()) + &l.bias;
    let closest = |z: &Array2<f64>| z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let mut h = enc.clone();
    let mut worst = f64::INFINITY;
    for (i, layer) in net.trunk.iter().enumerate() {
        let input = if i + 1 == net.config.skip_layer {
            concatenate(Axis(1), &[h.view(), enc.view()]).unwrap()
        } else {
            h.clone()
        };
        let z = affine(&input, layer);
        worst = worst.min(closest(&z));
        h = z.mapv(|v| v.max(0.0));
    }
    worst = worst.min(closest(&affine(&h, &net.density)));
    worst.min(closest(&affine(&h, &net.semantic_hidden)))
}

fn smooth_at_step(inst: &Instance) -> bool {
    let points = |fine: bool| -> Vec<[f64; 3]> {
        inst.rays
            .iter()
            .zip(&inst.plans)
            .flat_map(|(r, p)| if fine { p.fine.positions(r) } else { p.coarse.positions(r) })
            .collect()
    };
    kink_distance(&inst.coarse, &points(false)) > KINK_MARGIN && kink_distance(&inst.fine, &points(true)) > KINK_MARGIN
}

fn loss(inst: &Instance, coarse: &FieldParams<f64>, fine: &FieldParams<f64>) -> f64 {
    loss_and_gradients_fixed(coarse, fine, &inst.rays, &inst.plans, &inst.labels, 2)
        .unwrap()
        .report
        .total
}

/// Max relative error over every coordinate of one network.
fn check_network(inst: &Instance, which_fine: bool, analytic: &FieldParams<f64>) -> f64 {
    let mut worst = 0.0f64;
    let base = if which_fine { &inst.fine } else { &inst.coarse };
    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, _, g)| g.to_vec()).collect();
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let mut plus = base.clone();
            plus.tensors_mut()[t][i] += H;
            let mut minus = base.clone();
            minus.tensors_mut()[t][i] -= H;
            let (lp, lm) = if which_fine {
                (loss(inst, &inst.coarse, &plus), loss(inst, &inst.coarse, &minus))
            } else {
                (loss(inst, &plus, &inst.fine), loss(inst, &minus, &inst.fine))
            };
            let numeric = (lp - lm) / (2.0 * H);
            let err = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

pub struct GradientReport {
    pub worst: f64,
    pub checked: usize,
    pub redrawn: usize,
}

/// Checks `count` kink-free instances and returns the largest relative error.
pub fn run(count: usize) -> GradientReport {
    let mut report = GradientReport {
        worst: 0.0,
        checked: 0,
        redrawn: 0,
    };
    for seed in 0.. {
        if report.checked == count {
            break;
        }
        let inst = instance(seed);
        if !smooth_at_step(&inst) {
            report.redrawn += 1;
            continue;
        }
        report.checked += 1;
        let g = loss_and_gradients_fixed(&inst.coarse, &inst.fine, &inst.rays, &inst.plans, &inst.labels, 2).unwrap();
        let e = check_network(&inst, false, &g.coarse).max(check_network(&inst, true, &g.fine));
        report.worst = report.worst.max(e);
    }
    report
}
