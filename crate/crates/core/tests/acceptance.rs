//! Acceptance criteria, one line per criterion.
//!
//! Runs with `cargo test --test acceptance`; exits non-zero if any
//! criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::{linf, random_dist, random_triple};
use gradshift::aggregate::{additive_shift, gradient_shift, multiplicative_shift, power_shift, weak_to_strong};
use gradshift::cli::{cmd_jtax, JtaxArgs};
use gradshift::decode::{decode, DecodeOutcome, DecodePolicy, SamplerConfig, TraceFile};
use gradshift::evalkit::round2;
use gradshift::projection::{brute_force_projection, project_bregman};
use gradshift::theoremlab::{
    binary_hybrid_worst_case, closed_form_improvement, lab_rng, make_adversary, random_interior, residual_bound,
    run_suite, tightness_check, unprojected_shift, SuiteConfig, Verdict, DEFAULT_SEED,
};
use gradshift::{Distribution, Generator, Rule, Triple};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const GENERATORS: [Generator; 3] = [Generator::NegEntropy, Generator::Quadratic, Generator::Power(1.5)];

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_improvement_bound() -> Outcome {
    let start = Instant::now();
    let rows = run_suite(&SuiteConfig::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let gating: Vec<_> = rows.iter().filter(|r| r.gating).collect();
    let failed = gating.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let worst = gating.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    ensure(
        gating.len() == 540 && failed == 0 && worst >= -1e-9 && secs < 60.0,
        format!("{} cells, {failed} below bound, worst margin {worst:.3e}, {secs:.2}s", gating.len()),
    )
}

fn c2_tightness() -> Outcome {
    let mut worst = 0.0f64;
    for (gi, g) in GENERATORS.into_iter().enumerate() {
        let mut rng = lab_rng(DEFAULT_SEED, 100 + gi as u64);
        for i in 0..100 {
            let d = 2 + i % 4;
            let h = random_interior(d, &mut rng).map_err(|e| e.to_string())?;
            let p = random_interior(d, &mut rng).map_err(|e| e.to_string())?;
            worst = worst.max(tightness_check(g, &h, &p).map_err(|e| e.to_string())?);
        }
    }
    let h = Distribution::new(vec![0.5, 0.5]).unwrap();
    let p = Distribution::new(vec![0.25, 0.75]).unwrap();
    let kl = Generator::NegEntropy.divergence(&h, &p).unwrap();
    let sq = Generator::Quadratic.divergence(&h, &p).unwrap();
    for g in [Generator::NegEntropy, Generator::Quadratic] {
        worst = worst.max(tightness_check(g, &h, &p).map_err(|e| e.to_string())?);
    }
    ensure(
        worst <= 1e-9 && (kl - 0.143841).abs() < 5e-7 && (sq - 0.125).abs() < 1e-12,
        format!("max |gap| {worst:.3e} over 300 pairs; hand KL {kl:.6}, squared distance {sq:.6}"),
    )
}

fn c3_specializations() -> Outcome {
    let mut rng = common::rng(3);
    let (mut mult, mut add) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let t = random_triple(&mut rng, 2 + i % 5);
        let e = |r: gradshift::Result<Distribution>| r.map_err(|e| e.to_string());
        mult = mult.max(linf(&e(gradient_shift(Generator::NegEntropy, &t))?, &e(multiplicative_shift(&t))?));
        add = add.max(linf(&e(gradient_shift(Generator::Quadratic, &t))?, &e(additive_shift(&t))?));
    }
    ensure(
        mult <= 1e-9 && add <= 1e-9,
        format!("1000 triples: negentropy vs mult {mult:.3e}, quadratic vs add {add:.3e}"),
    )
}

fn c4_binary_hybrid() -> Outcome {
    let start = Instant::now();
    let mut rng = lab_rng(DEFAULT_SEED, 400);
    let mut worst: Option<(f64, String)> = None;
    let mut failing = 0;
    for _ in 0..10 {
        let h = random_interior(2, &mut rng).map_err(|e| e.to_string())?;
        let p = random_interior(2, &mut rng).map_err(|e| e.to_string())?;
        let mut pair_fails = false;
        for atoms in [2, 3] {
            let w = binary_hybrid_worst_case(&h, &p, atoms, 0.02).map_err(|e| e.to_string())?;
            let margin = w.margin();
            pair_fails |= margin < -1e-6;
            if worst.as_ref().is_none_or(|(m, _)| margin < *m) {
                let desc = format!(
                    "h=({:.4},{:.4}) p=({:.4},{:.4}) atoms={atoms} min={:.6} kl={:.6}",
                    h[0], h[1], p[0], p[1], w.minimum, w.kl
                );
                worst = Some((margin, desc));
            }
        }
        failing += pair_fails as usize;
    }
    let (margin, desc) = worst.expect("ten pairs");
    ensure(
        failing == 0,
        format!(
            "{failing}/10 pairs below KL - 1e-6; worst margin {margin:.6} at {desc}; {:.2}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn mix(a: &Distribution, b: &Distribution, s: f64) -> Distribution {
    Distribution::normalized(a.iter().zip(b.iter()).map(|(x, y)| (1.0 - s) * x + s * y).collect()).unwrap()
}

fn c5_relaxed_bound() -> Outcome {
    let mut rng = common::rng(5);
    let (mut eq_gap, mut proj_margin, mut residual, mut clamped) = (0.0f64, f64::INFINITY, 0.0f64, 0);
    for g in GENERATORS {
        for _ in 0..100 {
            let d = 3;
            let p_bar = random_dist(&mut rng, d);
            let y_bar = random_dist(&mut rng, d);
            let proxy_p = mix(&p_bar, &random_dist(&mut rng, d), 0.1);
            let proxy_y = mix(&y_bar, &random_dist(&mut rng, d), 0.1);
            let mut lab = lab_rng(0, 0);
            let adv = make_adversary(&y_bar, &p_bar, 0.0, &mut lab).map_err(|e| e.to_string())?;
            let rb = residual_bound(g, &p_bar, &y_bar, &proxy_p, &proxy_y).map_err(|e| e.to_string())?;
            clamped += rb.clamped as usize;

            let (raw, _, _) = closed_form_improvement(g, &adv, |p| {
                Ok(unprojected_shift(g, p, &proxy_y, &proxy_p)?.into_vec())
            })
            .map_err(|e| e.to_string())?;
            eq_gap = eq_gap.max((raw - rb.bound).abs());

            let (projected, _, _) = closed_form_improvement(g, &adv, |p| {
                let t = Triple::new(p.clone(), proxy_y.clone(), proxy_p.clone())?;
                Ok(gradient_shift(g, &t)?.into_vec())
            })
            .map_err(|e| e.to_string())?;
            proj_margin = proj_margin.min(projected - rb.bound);

            let exact = residual_bound(g, &p_bar, &y_bar, &p_bar, &y_bar).map_err(|e| e.to_string())?;
            residual = residual.max(exact.residual);
        }
    }
    ensure(
        eq_gap <= 1e-9 && proj_margin >= -1e-9 && residual <= 1e-12 && clamped == 0,
        format!(
            "300 instances: shift vs bound {eq_gap:.3e}, projected rule margin {proj_margin:.3e}, \
             exact-proxy residual {residual:.3e}, clamped {clamped}"
        ),
    )
}

fn c6_projection() -> Outcome {
    let mut rng = common::rng(6);
    let mut grid = 0.0f64;
    for g in GENERATORS {
        for _ in 0..200 {
            let x: Vec<f64> = match g {
                Generator::Quadratic => (0..3).map(|_| rng.gen_range(-1.0..2.0)).collect(),
                _ => (0..3).map(|_| rng.gen_range(0.01..2.0)).collect(),
            };
            let exact = project_bregman(g, &x).map_err(|e| e.to_string())?;
            let oracle = brute_force_projection(g, &x, 0.01).map_err(|e| e.to_string())?;
            grid = grid.max(linf(&exact.point, &oracle));
        }
    }
    let mut pyth = f64::INFINITY;
    for i in 0..500 {
        let d = 2 + i % 5;
        let q = random_dist(&mut rng, d);
        for g in [Generator::NegEntropy, Generator::Quadratic] {
            let x: Vec<f64> = match g {
                Generator::Quadratic => (0..d).map(|_| rng.gen_range(-1.0..2.0)).collect(),
                _ => (0..d).map(|_| rng.gen_range(0.01..2.0)).collect(),
            };
            let proj = project_bregman(g, &x).map_err(|e| e.to_string())?.point;
            let lhs = g.divergence(&q, &x).map_err(|e| e.to_string())?;
            let rhs = g.divergence(&q, &proj).unwrap() + g.divergence(&proj, &x).unwrap();
            pyth = pyth.min(lhs - rhs);
        }
    }
    ensure(
        grid <= 0.02 && pyth >= -1e-8,
        format!("grid oracle max L-inf {grid:.4} over 600 inputs; min Pythagorean slack {pyth:.3e} over 1000 cases"),
    )
}

fn c7_power_limits() -> Outcome {
    let mut rng = common::rng(7);
    let (mut two, mut near_one) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let t = random_triple(&mut rng, 2 + i % 5);
        let e = |r: gradshift::Result<Distribution>| r.map_err(|e| e.to_string());
        two = two.max(linf(&e(power_shift(2.0, &t))?, &e(additive_shift(&t))?));
        near_one = near_one.max(linf(&e(power_shift(1.01, &t))?, &e(multiplicative_shift(&t))?));
    }
    ensure(
        two <= 1e-9 && near_one <= 1e-2,
        format!("100 triples: beta=2 vs add {two:.3e}, beta=1.01 vs mult {near_one:.3e}"),
    )
}

fn random_trace(rng: &mut common::TestRng, vocab: usize, eot: usize, len: usize, eot_mass: f64) -> TraceFile {
    let steps = (0..len)
        .map(|_| {
            let mut w: Vec<f64> = (0..vocab).map(|_| 0.02 + rng.gen::<f64>()).collect();
            let rest: f64 = w.iter().sum::<f64>() - w[eot];
            w.iter_mut().for_each(|x| *x *= (1.0 - eot_mass) / rest);
            w[eot] = eot_mass;
            Distribution::normalized(w).unwrap()
        })
        .collect();
    TraceFile::new(vocab, eot, steps).unwrap()
}

fn run_decode(traces: &[TraceFile; 3], policy: &DecodePolicy, cfg: &SamplerConfig) -> Result<DecodeOutcome, String> {
    let [t, h, p] = traces.clone();
    let (mut t, mut h, mut p) = (t, h, p);
    decode(&mut t, &mut h, &mut p, policy, cfg).map_err(|e| e.to_string())
}

fn c8_weak_to_strong() -> Outcome {
    let mut rng = common::rng(8);
    let mut step_gap = 0.0f64;
    for i in 0..100 {
        let t = random_triple(&mut rng, 2 + i % 5);
        let a = weak_to_strong(1.0, &t).map_err(|e| e.to_string())?;
        let m = multiplicative_shift(&t).map_err(|e| e.to_string())?;
        step_gap = step_gap.max(linf(&a, &m));
    }
    let mut identical = 0;
    for session in 0..10u64 {
        let traces = [0, 1, 2].map(|_| random_trace(&mut rng, 16, 15, 100, 0.0));
        let cfg = SamplerConfig {
            seed: session,
            max_new_tokens: 100,
            ..SamplerConfig::default()
        };
        let w2s = run_decode(&traces, &DecodePolicy::from_rule(Rule::WeakToStrong { alpha: 1.0, k: None }), &cfg)?;
        let mult = run_decode(&traces, &DecodePolicy::from_rule(Rule::Multiplicative), &cfg)?;
        identical += (w2s.tokens.len() == 100 && w2s.tokens == mult.tokens) as usize;
    }
    ensure(
        step_gap <= 1e-12 && identical == 10,
        format!("per-step max L-inf {step_gap:.3e} over 100 triples; {identical}/10 length-100 sessions token-identical"),
    )
}

fn c9_jtax() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for ((c, s, b), expected) in [((0.88, 0.99, 0.89), 0.00), ((0.86, 1.00, 0.89), 0.03)] {
        let args = JtaxArgs {
            correct: c,
            success: s,
            bench: b,
            csv: None,
            method: "-".into(),
            dataset: "-".into(),
        };
        let mut out = Vec::new();
        cmd_jtax(&args, &mut out).map_err(|e| e.to_string())?;
        let printed = String::from_utf8(out).unwrap().trim().to_string();
        let value: f64 = printed.parse().map_err(|e| format!("{printed}: {e}"))?;
        ok &= round2(value) == expected;
        lines.push(format!("({c}, {s}, {b}) -> {printed} ~ {:.2}", round2(value)));
    }
    ensure(ok, lines.join("; "))
}

fn c10_determinism() -> Outcome {
    let mut rng = common::rng(10);
    let traces = [0, 1, 2].map(|_| random_trace(&mut rng, 12, 11, 80, 0.02));
    let cfg = SamplerConfig {
        seed: 77,
        max_new_tokens: 80,
        ..SamplerConfig::default()
    };
    let policy = DecodePolicy::from_rule(Rule::Hybrid);
    let a = serde_json::to_vec(&run_decode(&traces, &policy, &cfg)?).unwrap();
    let b = serde_json::to_vec(&run_decode(&traces, &policy, &cfg)?).unwrap();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sources = Vec::new();
    for (name, t) in ["t", "h", "p"].iter().zip(&traces) {
        let path = dir.path().join(name);
        t.write_to(std::fs::File::create(&path).unwrap()).unwrap();
        sources.push(format!("file:{}", path.display()));
    }
    let cli = || {
        Command::new(env!("CARGO_BIN_EXE_gradshift"))
            .args(["--seed", "77", "decode", "--target", &sources[0], "--helper", &sources[1], "--predictor", &sources[2]])
            .output()
            .map(|o| o.stdout)
            .map_err(|e| e.to_string())
    };
    let (c1, c2) = (cli()?, cli()?);

    let mut same = 0;
    for session in 0..50u64 {
        let t = random_trace(&mut rng, 12, 11, 60, 0.02);
        let h = random_trace(&mut rng, 12, 11, 60, 0.02);
        let traces = [t, h.clone(), h];
        let cfg = SamplerConfig {
            seed: session,
            max_new_tokens: 60,
            ..SamplerConfig::default()
        };
        let base = run_decode(&traces, &DecodePolicy::target_only(), &cfg)?;
        let steered = run_decode(&traces, &DecodePolicy::from_rule(Rule::Hybrid), &cfg)?;
        let hashes = |o: &DecodeOutcome| o.log.iter().map(|r| r.dist_hash.clone()).collect::<Vec<_>>();
        same += (base.tokens == steered.tokens && base.status == steered.status && hashes(&base) == hashes(&steered))
            as usize;
    }
    ensure(
        a == b && c1 == c2 && !c1.is_empty() && same == 50,
        format!(
            "library reruns identical: {}; CLI reruns identical: {}; zero-shift sessions matching target-only: {same}/50",
            a == b,
            c1 == c2
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("improvement bound over the default suite", c1_improvement_bound),
        ("tightness on the degenerate adversary", c2_tightness),
        ("generic rule specializations", c3_specializations),
        ("binary hybrid worst case", c4_binary_hybrid),
        ("relaxed bound with proxy moments", c5_relaxed_bound),
        ("projection against grid oracle", c6_projection),
        ("power family limits", c7_power_limits),
        ("weak-to-strong at alpha = 1", c8_weak_to_strong),
        ("jailbreak tax arithmetic", c9_jtax),
        ("decode determinism and zero shift", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
