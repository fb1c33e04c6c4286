//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs under `cargo test` (custom harness) or alone with
//! `cargo test -p klv-cli --test acceptance`.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use klv_cli::experiments::lemma_gap;
use klv_cli::slope::fit_slope;
use klv_core::lie::{bracket, dynkin_is_lie};
use klv_core::solver::{gamma_partition, klv_full, kusuoka_step, Partition, SolverConfig};
use klv_core::vector_fields::{affine_flow_exact, flow_exp, FlowConfig, State, VectorField, VectorFieldSystem};
use klv_core::{brownian_expected_signature, shuffle, CubatureFormula, GradedTensor, PiecewiseLinearPath, Word};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn cubature_validity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for d in 1..=5 {
        let r = CubatureFormula::degree3(d).unwrap().validate(3, 1e-10).unwrap();
        ok &= r.passed;
        worst = worst.max(r.max_defect);
    }
    let q5 = CubatureFormula::degree5_d1().unwrap();
    let r5 = q5.validate(5, 1e-10).unwrap();
    ok &= r5.passed;
    worst = worst.max(r5.max_defect);
    let r7 = q5.validate(7, 1e-10).unwrap();
    ok &= !r7.passed;
    outcome(
        ok,
        format!("max defect {worst:.1e}; degree 7 fails at word {} (defect {:.3})", r7.worst_word, r7.max_defect),
    )
}

fn expected_signature_monte_carlo() -> Outcome {
    const PATHS: usize = 100_000;
    const STEPS: usize = 1 << 10;
    const CHUNK: usize = 1000;
    let m = 4;
    let expected = brownian_expected_signature(1, m, 1.0).unwrap();
    let n = expected.coeffs().len();
    let dt = 1.0 / STEPS as f64;
    let durations = vec![dt; STEPS];
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..PATHS / CHUNK)
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; n];
            let mut sq = vec![0.0; n];
            for i in c * CHUNK..(c + 1) * CHUNK {
                let mut rng = stream(2, i as u64);
                let incs: Vec<Vec<f64>> = (0..STEPS)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        vec![z * dt.sqrt()]
                    })
                    .collect();
                let s = PiecewiseLinearPath::from_increments(&durations, &incs).unwrap().signature(m).unwrap();
                for (k, v) in s.coeffs().iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            (sum, sq)
        })
        .collect();
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for (s, q) in &chunks {
        for k in 0..n {
            sum[k] += s[k];
            sq[k] += q[k];
        }
    }
    let np = PATHS as f64;
    let mut worst_z: f64 = 0.0;
    let mut worst_word = Word::empty();
    let mut ok = true;
    for (k, w) in expected.basis().words().iter().enumerate() {
        let mean = sum[k] / np;
        let var = (sq[k] / np - mean * mean).max(0.0) * np / (np - 1.0);
        let se = (var / np).sqrt();
        let diff = (mean - expected.coeffs()[k]).abs();
        let pass = if se < 1e-12 { diff < 1e-9 } else { diff <= 4.0 * se };
        ok &= pass;
        let z = if se < 1e-12 { 0.0 } else { diff / se };
        if z >= worst_z {
            worst_z = z;
            worst_word = w.clone();
        }
    }
    outcome(ok, format!("{n} words, {PATHS} paths x {STEPS} steps; worst |z| = {worst_z:.2} at {worst_word}"))
}

fn random_tensor(rng: &mut ChaCha8Rng, d: usize, m: usize, zero_constant: bool) -> GradedTensor {
    let words = GradedTensor::zero(d, m).basis().words().to_vec();
    GradedTensor::from_terms(
        d,
        m,
        words.into_iter().map(|w| {
            let c = if zero_constant && w.is_empty() { 0.0 } else { rng.random_range(-1.0..1.0) };
            (w, c)
        }),
    )
    .unwrap()
}

fn random_path(rng: &mut ChaCha8Rng, d: usize, horizon: f64) -> PiecewiseLinearPath {
    let segs = rng.random_range(1..=5);
    let mut cuts: Vec<f64> = (0..segs - 1).map(|_| rng.random_range(0.0..horizon)).collect();
    cuts.push(0.0);
    cuts.push(horizon);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let durations: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
    let incs: Vec<Vec<f64>> = durations.iter().map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    PiecewiseLinearPath::from_increments(&durations, &incs).unwrap()
}

fn algebraic_identities() -> Outcome {
    const CHECKS: usize = 10_000;
    const TOL: f64 = 1e-10;
    let names = ["associativity", "dilation", "exp/log", "dilate-exp", "shuffle", "dynkin", "jacobi"];
    let mut failures = [0usize; 7];
    let mut worst = [0f64; 7];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..CHECKS {
        let kind = i % 7;
        let d = rng.random_range(1..=3);
        let m = rng.random_range(1..=4);
        let err = match kind {
            0 => {
                let (a, b, c) = (random_tensor(&mut rng, d, m, false), random_tensor(&mut rng, d, m, false), random_tensor(&mut rng, d, m, false));
                let l = a.mul(&b).unwrap().mul(&c).unwrap();
                l.max_abs_diff(&a.mul(&b.mul(&c).unwrap()).unwrap()).unwrap().0
            }
            1 => {
                let (a, b) = (random_tensor(&mut rng, d, m, false), random_tensor(&mut rng, d, m, false));
                let lambda = rng.random_range(-2.0..2.0);
                let l = a.mul(&b).unwrap().dilate(lambda);
                l.max_abs_diff(&a.dilate(lambda).mul(&b.dilate(lambda)).unwrap()).unwrap().0
            }
            2 => {
                let a = random_tensor(&mut rng, d, m, true);
                let e1 = a.exp().unwrap().log().unwrap().max_abs_diff(&a).unwrap().0;
                let g = a.add_constant(1.0);
                e1.max(g.log().unwrap().exp().unwrap().max_abs_diff(&g).unwrap().0)
            }
            3 => {
                let a = random_tensor(&mut rng, d, m, true);
                let lambda = rng.random_range(-2.0..2.0);
                let e1 = a.exp().unwrap().dilate(lambda).max_abs_diff(&a.dilate(lambda).exp().unwrap()).unwrap().0;
                let g = a.exp().unwrap();
                e1.max(g.log().unwrap().dilate(lambda).max_abs_diff(&g.dilate(lambda).log().unwrap()).unwrap().0)
            }
            4 => {
                let h = rng.random_range(0.1..2.0);
                let p = random_path(&mut rng, d, h);
                let s = p.signature(m).unwrap();
                let words = s.basis().words().to_vec();
                let u = &words[rng.random_range(0..words.len())];
                let v = &words[rng.random_range(0..words.len())];
                if u.graded_degree() + v.graded_degree() > m {
                    0.0
                } else {
                    let rhs: f64 = shuffle(u, v).iter().map(|(w, n)| *n as f64 * s.coeff(w)).sum();
                    (s.coeff(u) * s.coeff(v) - rhs).abs()
                }
            }
            5 => {
                let h = rng.random_range(0.1..2.0);
                let p = random_path(&mut rng, d, h);
                let l = p.signature(m).unwrap().log().unwrap();
                if dynkin_is_lie(&l, TOL).unwrap() { 0.0 } else { f64::INFINITY }
            }
            _ => {
                let (a, b, c) = (random_tensor(&mut rng, d, m, false), random_tensor(&mut rng, d, m, false), random_tensor(&mut rng, d, m, false));
                let br = |x: &GradedTensor, y: &GradedTensor| bracket(x, y).unwrap();
                let jac = br(&a, &br(&b, &c)).add(&br(&b, &br(&c, &a))).unwrap().add(&br(&c, &br(&a, &b))).unwrap();
                jac.max_abs_diff(&GradedTensor::zero(d, m)).unwrap().0
            }
        };
        worst[kind] = worst[kind].max(err);
        if !(err <= TOL) {
            failures[kind] += 1;
        }
    }
    let total: usize = failures.iter().sum();
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.0e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(total == 0, format!("{CHECKS} checks, {total} failures; worst: {detail}"))
}

fn time_letter_removal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let m = rng.random_range(2..=5);
        let s = rng.random_range(0.05..3.0);
        let p = random_path(&mut rng, d, s);
        let shift = GradedTensor::letter(d, m, 0).unwrap().scale(-1.0).dilate(s.sqrt()).exp().unwrap();
        let l = shift.mul(&p.signature(m).unwrap()).unwrap().log().unwrap();
        worst = worst.max(l.coeff(&Word::from([0])).abs());
    }
    outcome(worst <= 1e-12, format!("100 paths, max |coefficient of (0)| = {worst:.1e}"))
}

fn gbm_slope(q: &CubatureFormula, ks: &[usize]) -> (f64, Vec<f64>) {
    let (mu, sigma) = (0.05, 0.3);
    let sys = VectorFieldSystem::gbm(mu, sigma);
    let reference = (mu + 0.5 * sigma * sigma).exp();
    let cfg = SolverConfig { flow: FlowConfig::with_substeps(64), ..Default::default() };
    let x = State::from_element(1, 1.0);
    let f = |y: &State| y[0];
    let errors: Vec<f64> = ks
        .iter()
        .map(|&k| {
            let p = gamma_partition(1.0, k, 2.0).unwrap();
            (klv_full(q, &sys, &f, &x, &p, &cfg).unwrap().value - reference).abs()
        })
        .collect();
    let pairs: Vec<(f64, f64)> = ks.iter().map(|&k| k as f64).zip(errors.iter().copied()).collect();
    (fit_slope(&pairs).unwrap().slope, errors)
}

fn convergence_rate() -> Outcome {
    let k3: Vec<usize> = (2..=12).collect();
    let k5: Vec<usize> = (2..=9).collect();
    let (s3, e3) = gbm_slope(&CubatureFormula::degree3(1).unwrap(), &k3);
    let (s5, e5) = gbm_slope(&CubatureFormula::degree5_d1().unwrap(), &k5);
    let ok = (-1.25..=-0.75).contains(&s3) && (-2.35..=-1.65).contains(&s5);
    outcome(
        ok,
        format!(
            "degree 3 slope {s3:.3} (err {:.1e}..{:.1e}); degree 5 slope {s5:.3} (err {:.1e}..{:.1e})",
            e3[0],
            e3[e3.len() - 1],
            e5[0],
            e5[e5.len() - 1]
        ),
    )
}

fn flow_tensor_gap_rate() -> Outcome {
    let r = lemma_gap(3, 0, &[0.4, 0.2, 0.1, 0.05], 1024).unwrap();
    let ok = r.fit.slope >= r.expected_slope - 0.3;
    outcome(
        ok,
        format!(
            "slope {:.3} (need >= {:.1}); remainder bound on [-2,2]^2: max gap {:.2e} vs bound [{:.2e}, {:.2e}] ({})",
            r.fit.slope,
            r.expected_slope - 0.3,
            r.max_gap_on_box,
            r.bound.lower,
            r.bound.upper,
            if r.bound_holds { "holds" } else { "violated" }
        ),
    )
}

/// Largest `|kusuoka_step − one-step klv_full|` per `s`, and the fitted slope.
fn kusuoka_gap(sys: &VectorFieldSystem, x: &State, truncation: usize) -> (Vec<f64>, Option<f64>) {
    let q = CubatureFormula::degree5_d1().unwrap();
    let ql = q.to_lie_support_at(truncation).unwrap();
    let flow = FlowConfig::with_substeps(1024);
    let cfg = SolverConfig { flow, ..Default::default() };
    let f = |y: &State| y.iter().map(|c| c + 0.5 * c * c).sum::<f64>();
    let ss = [0.4, 0.2, 0.1, 0.05];
    let diffs: Vec<f64> = ss
        .iter()
        .map(|&s| {
            let lie = kusuoka_step(&ql, sys, &f, x, s, &flow).unwrap();
            let path = klv_full(&q, sys, &f, x, &Partition::new(vec![0.0, s]).unwrap(), &cfg).unwrap().value;
            (lie - path).abs()
        })
        .collect();
    let pairs: Vec<(f64, f64)> = ss.iter().copied().zip(diffs.iter().copied()).collect();
    (diffs, fit_slope(&pairs).ok().map(|f| f.slope))
}

fn kusuoka_equivalence() -> Outcome {
    // Scalar GBM: the two fields commute, so both operators agree exactly.
    let (scalar, _) = kusuoka_gap(&VectorFieldSystem::gbm(0.05, 0.3), &State::from_element(1, 1.0), 5);
    let scalar_max = scalar.iter().fold(0.0f64, |m, v| m.max(*v));
    // Two-dimensional linear (matrix) GBM with non-commuting fields.
    let sys = VectorFieldSystem::affine(
        vec![DMatrix::from_row_slice(2, 2, &[0.05, 0.3, -0.2, 0.0]), DMatrix::from_row_slice(2, 2, &[0.3, 0.4, 0.0, -0.2])],
        vec![DVector::zeros(2), DVector::zeros(2)],
    )
    .unwrap();
    let x = State::from_vec(vec![1.0, 0.5]);
    let (_, s3) = kusuoka_gap(&sys, &x, 3);
    let (_, s5) = kusuoka_gap(&sys, &x, 5);
    let (s3, s5) = (s3.unwrap_or(f64::NAN), s5.unwrap_or(f64::NAN));
    let ok = scalar_max <= 1e-13 && s3 >= 2.0 - 0.3 && s5 >= 3.0 - 0.3;
    outcome(
        ok,
        format!("scalar GBM max diff {scalar_max:.1e}; matrix GBM slope {s3:.3} at m=3 (need >= 1.7), {s5:.3} at m=5 (need >= 2.7)"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut sizes = Vec::new();
    for (name, cubature, mode, ks) in [
        ("full", "degree3", "full", "[2, 4, 6, 8, 10, 12]"),
        ("sampled", "degree5_d1", "sampled", "[2, 4, 6]"),
    ] {
        let cfg = dir.path().join(format!("{name}.json"));
        fs::write(
            &cfg,
            format!(
                r#"{{"system": "gbm(0.05, 0.3)", "payoff": "identity", "x0": [1.0], "T": 1.0,
                    "cubature": {{"builtin": "{cubature}"}}, "partition": {{"gamma": 2.0, "k_list": {ks}}},
                    "mode": "{mode}", "seed": 17, "caps": {{"samples": 5000}}}}"#
            ),
        )
        .unwrap();
        let mut outputs = Vec::new();
        for threads in ["1", "4", "8"] {
            let out = dir.path().join(format!("{name}-{threads}"));
            let code = klv_cli::run([
                "klv",
                "converge",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
            ]);
            ok &= code == 0;
            outputs.push(fs::read(out.join("convergence.csv")).unwrap_or_default());
        }
        ok &= !outputs[0].is_empty() && outputs.iter().all(|o| *o == outputs[0]);
        sizes.push(format!("{name} {} bytes", outputs[0].len()));
    }
    outcome(ok, format!("threads 1/4/8 byte-identical: {}", sizes.join(", ")))
}

fn affine_flow_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut min_slope = f64::INFINITY;
    let mut max_slope = f64::NEG_INFINITY;
    let mut worst_256: f64 = 0.0;
    for _ in 0..20 {
        let n = 3;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let b = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let v = VectorField::affine(a.clone(), b.clone()).unwrap();
        let exact = affine_flow_exact(&a, &b, 1.0, &x);
        let err = |k: usize| (flow_exp(&v, 1.0, &x, &FlowConfig::with_substeps(k)).unwrap() - &exact).norm();
        let ks = [2usize, 4, 8, 16];
        let pairs: Vec<(f64, f64)> = ks.iter().map(|&k| (k as f64, err(k))).collect();
        let slope = fit_slope(&pairs).unwrap().slope;
        min_slope = min_slope.min(slope);
        max_slope = max_slope.max(slope);
        worst_256 = worst_256.max(err(256));
    }
    let ok = min_slope >= -4.3 && max_slope <= -3.7 && worst_256 < 1e-10;
    outcome(ok, format!("slopes in [{min_slope:.3}, {max_slope:.3}] (order 4), max error at 256 substeps {worst_256:.1e}"))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("cubature validity", Duration::from_secs(1), cubature_validity),
        ("expected-signature Monte Carlo", Duration::from_secs(120), expected_signature_monte_carlo),
        ("algebraic identities", Duration::from_secs(600), algebraic_identities),
        ("time-letter removal", Duration::from_secs(600), time_letter_removal),
        ("convergence rate", Duration::from_secs(300), convergence_rate),
        ("flow vs tensor gap", Duration::from_secs(30), flow_tensor_gap_rate),
        ("Kusuoka operator equivalence", Duration::from_secs(30), kusuoka_equivalence),
        ("determinism", Duration::from_secs(600), determinism),
        ("affine flow oracle", Duration::from_secs(600), affine_flow_oracle),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= *limit, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let time_note = if elapsed > *limit { format!(" over the {limit:?} limit") } else { String::new() };
        println!(
            "[{}] {}. {} ({:.2?}{}): {}",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            name,
            elapsed,
            time_note,
            detail
        );
        if !passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
