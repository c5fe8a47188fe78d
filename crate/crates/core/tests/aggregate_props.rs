mod common;

use common::{any_triple, linf, triple_of};
use gradshift::aggregate::{
    additive_shift, gradient_shift, hybrid_shift, hybrid_shift_detailed, multiplicative_shift, power_shift,
    weak_to_strong,
};
use gradshift::{Generator, Rule, Triple};
use proptest::prelude::*;

/// Multiplicative rule written out directly, no floor.
fn mult_oracle(t: &Triple) -> Vec<f64> {
    let w: Vec<f64> = (0..t.dim())
        .map(|i| t.target()[i] * t.helper()[i] / t.predictor()[i])
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn every_rule() -> Vec<Rule> {
    vec![
        Rule::Additive,
        Rule::Multiplicative,
        Rule::Hybrid,
        Rule::Power(1.3),
        Rule::Generic(Generator::NegEntropy),
        Rule::Generic(Generator::Quadratic),
        Rule::Generic(Generator::Power(1.7)),
        Rule::WeakToStrong { alpha: 1.0, k: None },
        Rule::WeakToStrong { alpha: 3.0, k: Some(10) },
    ]
}

proptest! {
    #[test]
    fn specialisations(t in any_triple()) {
        let ne = gradient_shift(Generator::NegEntropy, &t).unwrap();
        let mult = multiplicative_shift(&t).unwrap();
        prop_assert!(linf(&ne, &mult) <= 1e-9);
        prop_assert!(linf(&mult, &mult_oracle(&t)) <= 1e-12);
        let quad = gradient_shift(Generator::Quadratic, &t).unwrap();
        prop_assert!(linf(&quad, &additive_shift(&t).unwrap()) <= 1e-9);
        prop_assert_eq!(weak_to_strong(1.0, &t).unwrap(), mult);
    }

    #[test]
    fn outputs_are_distributions(t in any_triple()) {
        for r in every_rule() {
            let p = r.apply(&t).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9, "{r}");
            prop_assert!(p.iter().all(|x| *x >= 0.0), "{r}");
        }
    }

    #[test]
    fn zero_shift_is_identity((t, p) in (2usize..=6).prop_flat_map(|d| (triple_of(d), common::interior_of(d)))) {
        let z = Triple::new(t.target().clone(), p.clone(), p).unwrap();
        for r in every_rule() {
            prop_assert_eq!(r.apply(&z).unwrap(), z.target().clone(), "{}", r);
        }
    }

    #[test]
    fn hybrid_identities(t in any_triple()) {
        let out = hybrid_shift_detailed(&t).unwrap();
        let (pt, ph, pth) = (t.target(), t.helper(), t.predictor());
        let mut deficit = 0.0;
        for y in 0..t.dim() {
            if ph[y] < pth[y] {
                prop_assert_eq!(out.dist[y], pt[y] * ph[y] / pth[y]);
                deficit += pt[y] * (1.0 - ph[y] / pth[y]);
            }
        }
        prop_assert!((out.mass_deficit - deficit).abs() <= 1e-12);
        prop_assert!(out.epsilon >= 0.0);

        // Mean lemma: at the predictor the rule returns the helper.
        let at_mean = Triple::new(pth.clone(), ph.clone(), pth.clone()).unwrap();
        prop_assert!(linf(&hybrid_shift(&at_mean).unwrap(), ph) <= 1e-15);
    }

    #[test]
    fn power_endpoints(t in any_triple()) {
        prop_assert!(linf(&power_shift(2.0, &t).unwrap(), &additive_shift(&t).unwrap()) <= 1e-9);
        // The gap to the multiplicative rule is first order in beta - 1.
        let mult = multiplicative_shift(&t).unwrap();
        let coarse = linf(&power_shift(1.01, &t).unwrap(), &mult);
        let fine = linf(&power_shift(1.001, &t).unwrap(), &mult);
        prop_assert!(fine <= 0.2 * coarse + 1e-9, "{fine} vs {coarse}");
    }
}

#[test]
fn power_is_continuous_in_beta() {
    let mut rng = common::rng(5);
    for _ in 0..10 {
        let t = common::random_triple(&mut rng, 4);
        let mut prev = power_shift(1.01, &t).unwrap();
        let mut beta: f64 = 1.01;
        while beta < 2.0 - 1e-9 {
            beta += 1e-3;
            let next = power_shift(beta.min(2.0), &t).unwrap();
            assert!(linf(&prev, &next) <= 1e-3, "beta {beta}");
            prev = next;
        }
    }
}

#[test]
fn weak_to_strong_amplifies() {
    let t = Triple::from_vecs(vec![0.7, 0.2, 0.1], vec![0.2, 0.5, 0.3], vec![0.5, 0.3, 0.2]).unwrap();
    let one = weak_to_strong(1.0, &t).unwrap();
    let two = weak_to_strong(2.0, &t).unwrap();
    // The up-weighted token gains more mass as alpha grows.
    assert!(two[1] > one[1]);
    assert!(two[0] < one[0]);
}
