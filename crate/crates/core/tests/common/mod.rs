#![allow(dead_code)]

use pointattack::cloud::{generate_shape, ShapeClass};
use pointattack::{Classifier64, Dims, PointCloud64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shape of class `seed % 6` relabeled with the model's own prediction, so
/// every sample starts correctly classified.
pub fn self_labeled(model: &Classifier64, n: usize, seed: u64) -> PointCloud64 {
    let c: PointCloud64 = generate_shape(ShapeClass::ALL[(seed % 6) as usize], n, seed).unwrap();
    let p = model.predict(&c);
    c.with_label(Some(p))
}

pub fn random_model(seed: u64) -> Classifier64 {
    Classifier64::random(Dims::default(), seed)
}

pub fn random_cloud(n: usize, r: &mut ChaCha8Rng) -> PointCloud64 {
    let pts = (0..n)
        .map(|_| [0; 3].map(|_| r.random_range(-0.5..0.5)))
        .collect();
    PointCloud64::new(pts, None).unwrap()
}

/// `orig` moved by a uniform offset in `[-eps, eps]` per coordinate.
pub fn jittered(orig: &PointCloud64, eps: f64, r: &mut ChaCha8Rng) -> PointCloud64 {
    let pts = orig
        .points()
        .iter()
        .map(|p| [0, 1, 2].map(|k| p[k] + r.random_range(-eps..=eps)))
        .collect();
    PointCloud64::new(pts, orig.label()).unwrap()
}

pub fn brute_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn brute_directed(from: &PointCloud64, to: &PointCloud64) -> f64 {
    let mut total = 0.0;
    for p in from.points() {
        let mut best = f64::INFINITY;
        for q in to.points() {
            best = best.min(brute_sq(p, q));
        }
        total += best;
    }
    total / from.len() as f64
}

pub fn brute_chamfer(a: &PointCloud64, b: &PointCloud64) -> f64 {
    0.5 * (brute_directed(a, b) + brute_directed(b, a))
}

pub fn brute_hausdorff(adv: &PointCloud64, orig: &PointCloud64) -> f64 {
    let mut worst: f64 = 0.0;
    for p in adv.points() {
        let best = orig.points().iter().map(|q| brute_sq(p, q)).fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    worst
}

pub fn brute_l2(adv: &PointCloud64, orig: &PointCloud64) -> f64 {
    let mut s = 0.0;
    for (p, q) in adv.points().iter().zip(orig.points()) {
        s += brute_sq(p, q);
    }
    s.sqrt()
}

/// Per-coordinate clamp of `v - o` into `[-eps, eps]`.
pub fn clamp_coord(v: f64, o: f64, eps: f64) -> f64 {
    if (v - o).abs() <= eps {
        v
    } else {
        o + eps.copysign(v - o)
    }
}
