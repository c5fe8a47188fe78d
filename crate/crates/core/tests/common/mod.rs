#![allow(dead_code)]

use gradshift::{Distribution, Triple};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TestRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

/// Interior point with every entry at least `min / d`-ish.
pub fn random_dist(rng: &mut TestRng, d: usize) -> Distribution {
    let w: Vec<f64> = (0..d).map(|_| 0.02 + rng.gen::<f64>()).collect();
    Distribution::normalized(w).unwrap()
}

pub fn random_triple(rng: &mut TestRng, d: usize) -> Triple {
    Triple::new(random_dist(rng, d), random_dist(rng, d), random_dist(rng, d)).unwrap()
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn interior(d: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Distribution> {
    d.prop_flat_map(|d| prop::collection::vec(0.01f64..1.0, d))
        .prop_map(|w| Distribution::normalized(w).unwrap())
}

pub fn interior_of(d: usize) -> impl Strategy<Value = Distribution> {
    prop::collection::vec(0.01f64..1.0, d).prop_map(|w| Distribution::normalized(w).unwrap())
}

pub fn triple_of(d: usize) -> impl Strategy<Value = Triple> {
    (interior_of(d), interior_of(d), interior_of(d)).prop_map(|(a, b, c)| Triple::new(a, b, c).unwrap())
}

pub fn any_triple() -> impl Strategy<Value = Triple> {
    (2usize..=6).prop_flat_map(triple_of)
}
