mod common;

use common::{interior, interior_of, linf};
use gradshift::{Distribution, Generator};
use proptest::prelude::*;

const GENERATORS: [Generator; 4] = [
    Generator::NegEntropy,
    Generator::Quadratic,
    Generator::Power(1.5),
    Generator::Power(1.2),
];

fn pair() -> impl Strategy<Value = (Distribution, Distribution)> {
    (2usize..=6).prop_flat_map(|d| (interior_of(d), interior_of(d)))
}

/// `G(p) - G(q) - <grad G(q), p - q>` straight from the definition.
fn divergence_by_definition(g: Generator, p: &[f64], q: &[f64]) -> f64 {
    let grad = g.gradient(q).unwrap();
    let inner: f64 = grad.iter().zip(p.iter().zip(q)).map(|(z, (a, b))| z * (a - b)).sum();
    g.value(p).unwrap() - g.value(q).unwrap() - inner
}

proptest! {
    #[test]
    fn excess_risk_is_the_divergence((p, q) in pair()) {
        for g in GENERATORS {
            let excess = g.expected_loss(&q, &p).unwrap() - g.expected_loss(&p, &p).unwrap();
            let d = g.divergence(&p, &q).unwrap();
            prop_assert!((excess - d).abs() <= 1e-9, "{g}: {excess} vs {d}");
            prop_assert!((d - divergence_by_definition(g, &p, &q)).abs() <= 1e-9);
            prop_assert!(d >= -1e-12);
        }
    }

    #[test]
    fn dual_round_trip(p in interior(2..=8)) {
        for g in GENERATORS {
            let z = g.gradient(&p).unwrap();
            let back = g.inverse_gradient(&z).unwrap();
            prop_assert!(linf(&back, &p) <= 1e-12, "{g}");
            let again = g.gradient(&back).unwrap();
            let scale = z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(linf(&again, &z) <= 1e-12 * scale, "{g}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences(p in interior(2..=5)) {
        let h = 1e-6;
        for g in GENERATORS {
            let grad = g.gradient(&p).unwrap();
            for i in 0..p.len() {
                let mut up = p.to_vec();
                let mut down = p.to_vec();
                up[i] += h;
                down[i] -= h;
                let fd = (g.value(&up).unwrap() - g.value(&down).unwrap()) / (2.0 * h);
                prop_assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + grad[i].abs()), "{g} coord {i}");
            }
        }
    }

    #[test]
    fn joint_convexity(
        (p1, p2, q1, q2) in (2usize..=5).prop_flat_map(|d| (interior_of(d), interior_of(d), interior_of(d), interior_of(d))),
        lambda in 0.0f64..=1.0,
    ) {
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
        };
        for g in GENERATORS {
            let lhs = g.divergence(&mix(&p1, &p2), &mix(&q1, &q2)).unwrap();
            let rhs = lambda * g.divergence(&p1, &q1).unwrap() + (1.0 - lambda) * g.divergence(&p2, &q2).unwrap();
            prop_assert!(lhs <= rhs + 1e-9, "{g}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn power_two_is_half_quadratic((p, q) in pair()) {
        let p2 = Generator::Power(2.0);
        let quad = Generator::Quadratic;
        prop_assert!((2.0 * p2.divergence(&p, &q).unwrap() - quad.divergence(&p, &q).unwrap()).abs() <= 1e-12);
        prop_assert!((2.0 * p2.value(&p).unwrap() - quad.value(&p).unwrap()).abs() <= 1e-12);
        let a = p2.gradient(&p).unwrap();
        let b = quad.gradient(&p).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((2.0 * x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn strict_propriety_on_a_grid() {
    let step = 0.01;
    let n = 100;
    let truths = [[0.2, 0.3, 0.5], [0.6, 0.25, 0.15], [0.34, 0.33, 0.33], [0.05, 0.05, 0.9]];
    for g in [Generator::NegEntropy, Generator::Quadratic, Generator::Power(1.5)] {
        for p in &truths {
            let mut best = (f64::INFINITY, [0.0; 3]);
            for i in 1..n {
                for j in 1..(n - i) {
                    let q = [i as f64 * step, j as f64 * step, (n - i - j) as f64 * step];
                    let risk = g.expected_loss(&q, p).unwrap();
                    if risk < best.0 {
                        best = (risk, q);
                    }
                }
            }
            assert!(linf(&best.1, p) <= step + 1e-12, "{g}: argmin {:?} for {p:?}", best.1);
        }
    }
}
