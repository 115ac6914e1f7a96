//! Volume-rendering invariants checked on random rays.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semnerf::render::{composite, composite_intervals, SampleSet};

pub const TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Case {
    pub samples: SampleSet,
    pub sigma: Vec<f64>,
    pub logits: Array2<f64>,
    /// Where the zero-density sample goes, its interval and its logits.
    pub insert_at: usize,
    pub insert_delta: f64,
    pub insert_logits: Vec<f64>,
}

/// Largest deviation of each invariant on one case.
#[derive(Debug, Clone, Copy, Default)]
pub struct Deviation {
    pub min_weight: f64,
    pub opacity: f64,
    pub insertion: f64,
    pub softmax: f64,
    pub argmax_mismatch: bool,
}

impl Deviation {
    pub fn ok(&self) -> bool {
        self.min_weight >= 0.0 && self.opacity <= TOL && self.insertion <= TOL && self.softmax <= TOL && !self.argmax_mismatch
    }

    pub fn merge(&mut self, o: &Deviation) {
        self.min_weight = self.min_weight.min(o.min_weight);
        self.opacity = self.opacity.max(o.opacity);
        self.insertion = self.insertion.max(o.insertion);
        self.softmax = self.softmax.max(o.softmax);
        self.argmax_mismatch |= o.argmax_mismatch;
    }
}

pub fn random_case(rng: &mut impl Rng) -> Case {
    let n = rng.random_range(1..=48);
    let classes = rng.random_range(2..=12);
    let t_near = rng.random_range(0.05..1.0);
    let t_far = t_near + rng.random_range(0.5..10.0);
    let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(t_near..t_far)).collect();
    t.sort_by(f64::total_cmp);
    let sigma = (0..n)
        .map(|_| {
            if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random_range(-3.0f64..2.0).exp().powf(2.3)
            }
        })
        .collect();
    let logits = Array2::from_shape_fn((n, classes), |_| rng.random_range(-10.0..10.0));
    Case {
        samples: SampleSet { t, t_near, t_far },
        sigma,
        logits,
        insert_at: rng.random_range(0..=n),
        insert_delta: rng.random_range(0.0..2.0),
        insert_logits: (0..classes).map(|_| rng.random_range(-10.0..10.0)).collect(),
    }
}

pub fn check(case: &Case) -> Deviation {
    let out = composite(&case.sigma, case.logits.view(), &case.samples).unwrap();
    let deltas = case.samples.deltas();
    let optical: f64 = case.sigma.iter().zip(&deltas).map(|(s, d)| s * d).sum();
    let opacity: f64 = out.weights.iter().sum();

    let mut sigma = case.sigma.clone();
    let mut d = deltas.clone();
    let mut rows: Vec<Vec<f64>> = case.logits.rows().into_iter().map(|r| r.to_vec()).collect();
    sigma.insert(case.insert_at, 0.0);
    d.insert(case.insert_at, case.insert_delta);
    rows.insert(case.insert_at, case.insert_logits.clone());
    let classes = case.logits.ncols();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let padded = Array2::from_shape_vec((sigma.len(), classes), flat).unwrap();
    let inserted = composite_intervals(&sigma, padded.view(), &d).unwrap();
    let insertion = out
        .rendered_logits
        .iter()
        .zip(&inserted.rendered_logits)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
    Deviation {
        min_weight: out.weights.iter().copied().fold(f64::INFINITY, f64::min),
        opacity: (opacity - (1.0 - (-optical).exp())).abs(),
        insertion,
        softmax: (out.class_probs.iter().sum::<f64>() - 1.0).abs(),
        argmax_mismatch: argmax(&out.class_probs) != argmax(&out.rendered_logits),
    }
}

/// Runs `count` seeded cases; returns the merged deviation and the number
/// of failing cases.
pub fn run(count: usize, seed: u64) -> (Deviation, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Deviation {
        min_weight: f64::INFINITY,
        ..Deviation::default()
    };
    let mut failures = 0;
    for _ in 0..count {
        let d = check(&random_case(&mut rng));
        failures += usize::from(!d.ok());
        worst.merge(&d);
    }
    (worst, failures)
}
