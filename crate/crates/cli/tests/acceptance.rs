//! One PASS/FAIL line per acceptance criterion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fundsim_core::analytics::*;
use fundsim_core::conditions::*;
use fundsim_core::expectation::*;
use fundsim_core::processes::{LatticeKernel, LatticePmf};
use fundsim_core::rng::substream;
use fundsim_core::run::check_scenario;
use fundsim_core::Scenario;
use rand::Rng;

type Rng64 = fundsim_core::rng::StreamRng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(fixture(name)).unwrap()
}

fn within_time(start: Instant, limit: Duration, detail: &mut String) -> bool {
    let elapsed = start.elapsed();
    detail.push_str(&format!(", {:.2?} (limit {:?})", elapsed, limit));
    elapsed < limit
}

/// `E log V_fund/V_market` after one step by listing the four outcomes and
/// valuing both portfolios from their weights.
fn four_outcome_oracle(s: f64, m_up: f64, a: f64) -> f64 {
    let mut total = 0.0;
    for (y0, p0) in [(s, 0.5), (-s, 0.5)] {
        for (y1, p1) in [(2.0 * y0, m_up), (0.0, 1.0 - m_up)] {
            let x0 = [y0.exp(), a];
            let x1 = [y1.exp(), a];
            let market: f64 = (0..2).map(|i| x0[i] / (x0[0] + x0[1]) * x1[i] / x0[i]).sum();
            let fundamental: f64 = (0..2).map(|i| [1.0, a][i] / (1.0 + a) * x1[i] / x0[i]).sum();
            total += p0 * p1 * (fundamental / market).ln();
        }
    }
    total
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = build_counterexample(1.0).unwrap();
    let r = 2.0 / ((1f64.exp() + 1.0) * (1.0 + (-1f64).exp()));
    let r_ok = (spec.r_limit - r).abs() <= 1e-9 && (r - 0.393224).abs() < 5e-7;
    let m_ok = (spec.m_up - (r + 0.5) / 2.0).abs() <= 1e-9;
    let s = Scenario::counterexample(1.0, None, None).unwrap();
    let e = exact_expected_log_ratio(&s).unwrap().final_estimate();
    let oracle = four_outcome_oracle(1.0, spec.m_up, spec.a);
    let margin = spec.m_up - counterexample_lhs(1.0, spec.a).unwrap();
    let mut detail = format!(
        "r = {:.9}, m_up = {:.9}, A = {}, E = {e:.6e} (enumeration {oracle:.6e}), inequality margin {margin:.3e}",
        spec.r_limit, spec.m_up, spec.a
    );
    let ok = r_ok && m_ok && e < 0.0 && (e - oracle).abs() <= 1e-12 && margin >= 1e-9;
    let timely = within_time(start, Duration::from_secs(1), &mut detail);
    outcome(ok && timely, detail)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let s = Scenario::counterexample(1.0, Some(0.0), None).unwrap();
    let e = exact_expected_log_ratio(&s).unwrap().final_estimate();
    let a = s.fundamentals.stock(1)[0];
    let oracle = four_outcome_oracle(1.0, 0.0, a);
    let mut detail = format!("E = {e:.6e} (enumeration {oracle:.6e})");
    let ok = e > 0.0 && (e - oracle).abs() <= 1e-12;
    let timely = within_time(start, Duration::from_secs(1), &mut detail);
    outcome(ok && timely, detail)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let s = load("markov_cor3.json");
    let sets = check_scenario(&s).unwrap();
    let chain_ok = sets.iter().all(|c| c.applicable);
    let states: usize = s.processes[0].as_lattice().unwrap().rows().count();
    let report = exact_expected_log_ratio(&s).unwrap();
    let inc: Vec<f64> = report.increments.iter().map(|i| i.estimate).collect();
    let min = inc.iter().copied().fold(f64::INFINITY, f64::min);
    let mut detail = format!(
        "{states}-state chain, conditions {}, K = {}, increments {:?}, min {min:.4e}",
        if chain_ok { "pass" } else { "fail" },
        inc.len(),
        inc.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()
    );
    let ok = chain_ok && states == 5 && inc.len() == 4 && min >= 1e-6;
    let timely = within_time(start, Duration::from_secs(5), &mut detail);
    outcome(ok && timely, detail)
}

/// Smallest N on the doubling grid from 16 at which every increment's
/// one-sided lower bound is positive.
fn smallest_sufficient_paths(s: &Scenario) -> Option<(u64, Vec<f64>)> {
    let mut n = 16u64;
    while n <= 10_000_000 {
        let settings = McSettings { paths: n, ..s.mc.clone() };
        let report = mc_expected_log_ratio(s, &settings).unwrap();
        let lower: Vec<f64> = report.increments.iter().map(|i| i.lower).collect();
        if lower.iter().all(|&l| l > 0.0) {
            return Some((n, lower));
        }
        n *= 2;
    }
    None
}

fn positive_increments(name: &str, limit: Duration) -> Outcome {
    let start = Instant::now();
    let s = load(name);
    let found = smallest_sufficient_paths(&s);
    let fixture = mc_expected_log_ratio(&s, &s.mc).unwrap();
    let lows: Vec<f64> = fixture.increments.iter().map(|i| i.lower).collect();
    let fixture_ok = lows.iter().all(|&l| l > 0.0);
    let mut detail = match &found {
        Some((n, _)) => format!("smallest sufficient N = {n} (seed {})", s.mc.master_seed),
        None => "no N up to 1e7 suffices".to_string(),
    };
    detail.push_str(&format!(
        "; at {} paths lower bounds {:?}",
        s.mc.paths,
        lows.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()
    ));
    let timely = within_time(start, limit, &mut detail);
    outcome(found.is_some() && fixture_ok && timely, detail)
}

fn criterion_4() -> Outcome {
    let s = load("ou_cor1.json");
    let gaps_ok = s.schedule.gaps().all(|g| (g - std::f64::consts::LN_2).abs() < 1e-15) && s.schedule.steps() == 3;
    let mut o = positive_increments("ou_cor1.json", Duration::from_secs(60));
    o.ok &= gaps_ok && s.n() == 2;
    o
}

fn criterion_5() -> Outcome {
    positive_increments("ar1_white_noise.json", Duration::from_secs(60))
}

/// Left side of the relaxed-threshold limit evaluated at a finite `x`.
fn dk3_lhs(y: f64, d: f64, delta: f64, x: f64) -> f64 {
    let c = |u: f64| u.exp() + (-u).exp();
    let xe = x * delta.exp();
    let num = ((c(y) - 2.0) / (xe + 2.0)).ln_1p();
    let den = ((c(y + d) - c(d)) / (x + c(d))).ln_1p();
    0.5 * (1.0 - num / den)
}

/// Ratio of the two logarithms in the counterexample inequality, written so
/// that both are positive.
fn counterexample_ratio(s: f64, a: f64) -> f64 {
    let x = a + 1.0 / a;
    let c = |u: f64| u.exp() + (-u).exp();
    2.0 * ((c(s) - 2.0) / (x + 2.0)).ln_1p() / ((c(2.0 * s) - 2.0) / (x + 2.0)).ln_1p()
}

fn criterion_6() -> Outcome {
    let mut rng: Rng64 = substream(2024, 0, 0);
    let cases = 10_000;
    let mut worst = BTreeMap::<&str, f64>::new();
    let mut bump = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(v);
    };
    let mut sign_ok = true;
    let mut t4_worst = (0.0, 0.0, 0.0);
    for _ in 0..cases {
        let y: f64 = rng.random_range(-5.0..=5.0);
        let d: f64 = rng.random_range(-5.0..=5.0);
        let ctx = StockContext::new(
            rng.random_range(0.1..=100.0),
            rng.random_range(0.1..=100.0),
            rng.random_range(0.1..=100.0),
            rng.random_range(0.1..=100.0),
        )
        .unwrap();
        let p = Point2::new(y, d).unwrap();
        let q = reflect(Reflection::Prime, p);
        let g = |p| g_fn(p, ctx.b_k, ctx.f_next).unwrap();
        bump("g antisymmetry", (g(p) + g(q)).abs());
        let f_sum = f_increment(p, &ctx).unwrap() + f_increment(-p, &ctx).unwrap();
        bump("h decomposition", (h_fn(p, &ctx).unwrap() - f_sum).abs());
        bump("f(0, d)", f_increment(Point2::new(0.0, d).unwrap(), &ctx).unwrap().abs());

        // sign of g follows the side of the line d = -y/2
        let yp = y.abs().max(1e-3);
        let off: f64 = rng.random_range(1e-3..=5.0);
        let below = g_fn(Point2::new(yp, -0.5 * yp - off).unwrap(), ctx.b_k, ctx.f_next).unwrap();
        let above = g_fn(Point2::new(yp, -0.5 * yp + off).unwrap(), ctx.b_k, ctx.f_next).unwrap();
        let on = g_fn(Point2::new(yp, -0.5 * yp).unwrap(), ctx.b_k, ctx.f_next).unwrap();
        sign_ok &= below > 0.0 && above < 0.0 && on.abs() <= 1e-12;

        // relaxed threshold on y > 0, d > -y/2
        let yt: f64 = rng.random_range(1e-2..=5.0);
        let dt: f64 = rng.random_range((-0.5 * yt + 1e-2)..=5.0);
        let (d1, d2): (f64, f64) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let closed = t4_threshold(Point2::new(yt, dt).unwrap(), d1, d2).unwrap();
        let err = (closed - dk3_lhs(yt, dt, 2.0 * d1 + d2, 1e8)).abs();
        if err > t4_worst.0 {
            t4_worst = (err, yt, dt);
        }
        bump("t4 threshold vs x = 1e8", err);
    }
    let mut r_err = Vec::new();
    for s in [0.5, 1.0, 2.0] {
        let err = (counterexample_limit_r(s).unwrap() - counterexample_ratio(s, 1e6)).abs();
        r_err.push((s, err));
    }

    let limits = [
        ("g antisymmetry", 1e-12),
        ("h decomposition", 1e-10),
        ("f(0, d)", 1e-12),
        ("t4 threshold vs x = 1e8", 1e-5),
    ];
    let mut ok = sign_ok;
    let mut parts = vec![format!("{cases} cases; sign trichotomy {}", if sign_ok { "ok" } else { "broken" })];
    for (k, tol) in limits {
        let w = worst[k];
        ok &= w <= tol;
        parts.push(format!("{k} max {w:.2e} (tol {tol:.0e})"));
    }
    parts.push(format!("t4 worst at (y, d_y) = ({:.3}, {:.3})", t4_worst.1, t4_worst.2));
    for (s, err) in r_err {
        ok &= err <= 1e-6;
        parts.push(format!("r_limit({s}) vs A = 1e6 err {err:.2e} (tol 1e-6)"));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["counterexample_s1.json", "counterexample_remark.json", "markov_cor3.json"] {
        let s = load(name);
        let settings = McSettings { paths: 100_000, ..s.mc.clone() };
        let cmp = compare_engines(&s, &settings).unwrap();
        ok &= cmp.within(4.0);
        parts.push(format!("{name} max |z| = {:.2}", cmp.max_z));
    }
    outcome(ok, parts.join("; "))
}

fn random_measure(rng: &mut Rng64, symmetrize: bool, dominate: bool) -> DiscreteJointMeasure {
    let mut mass: BTreeMap<(i64, i64), u32> = BTreeMap::new();
    for _ in 0..rng.random_range(1..16) {
        let key = (rng.random_range(-8..=8), rng.random_range(-8..=8));
        *mass.entry(key).or_default() += rng.random_range(1..=12);
    }
    if dominate {
        let extra: Vec<_> = mass
            .iter()
            .filter(|((i, j), _)| *i > 0 && 2 * j > -i)
            .map(|(&(i, j), &w)| ((i, -i - j), w))
            .collect();
        for (key, w) in extra {
            *mass.entry(key).or_default() += w;
        }
    }
    if symmetrize {
        let snapshot = mass.clone();
        for (&(i, j), &w) in &snapshot {
            let e = mass.entry((-i, -j)).or_default();
            *e = (*e).max(w);
        }
    }
    DiscreteJointMeasure::new(
        mass.into_iter()
            .map(|((i, j), w)| (Point2::new(i as f64 / 4.0, j as f64 / 4.0).unwrap(), w as f64 / 4096.0)),
    )
    .unwrap()
}

fn random_rect(rng: &mut Rng64) -> impl Fn(Point2) -> bool {
    let (y0, d0): (f64, f64) = (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
    let (y1, d1) = (y0 + rng.random_range(0.0..3.0), d0 + rng.random_range(0.0..3.0));
    move |p: Point2| y0 <= p.y && p.y <= y1 && d0 <= p.d_y && p.d_y <= d1
}

/// Chain on `-2..=2` meeting the conditional-law conditions by construction.
fn constructed_kernel(rng: &mut Rng64) -> LatticeKernel {
    let states: Vec<i64> = (-2..=2).collect();
    let mut rows = BTreeMap::new();
    for k1 in [1i64, 2] {
        let mut w: BTreeMap<i64, f64> = states.iter().map(|&t| (t, rng.random_range(0.05..1.0))).collect();
        for &t in &states {
            if 2 * t > k1 {
                let partner = w[&(k1 - t)];
                w.insert(t, w[&t] * partner);
            }
        }
        let total: f64 = w.values().sum();
        let row: Vec<_> = w.into_iter().map(|(t, p)| (t, p / total)).collect();
        rows.insert(-k1, row.iter().map(|&(t, p)| (-t, p)).collect::<Vec<_>>());
        rows.insert(k1, row);
    }
    let (a, b, c): (f64, f64, f64) = (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0));
    let z = a + 2.0 * b + 2.0 * c;
    rows.insert(0, vec![(-2, c / z), (-1, b / z), (0, a / z), (1, b / z), (2, c / z)]);
    let (u, v): (f64, f64) = (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0));
    let z = 2.0 * (u + v);
    let init = LatticePmf::new([(-2, v / z), (-1, u / z), (1, u / z), (2, v / z)]).unwrap();
    LatticeKernel::new(rng.random_range(0.1..1.5), rows, init).unwrap()
}

fn criterion_8() -> Outcome {
    let mut rng: Rng64 = substream(8, 0, 0);
    let (mut sym_pass, mut str_pass, mut violations) = (0, 0, 0);
    let measures = 200;
    for i in 0..measures {
        let mu = random_measure(&mut rng, i % 2 == 0, i % 4 < 2);
        let t1 = check_t1(&mu, 1e-12);
        let sym = t1.condition("t1.i").unwrap().passed;
        let strength = t1.condition("t1.ii").unwrap().passed;
        sym_pass += sym as usize;
        str_pass += strength as usize;
        for _ in 0..1000 {
            let rect = random_rect(&mut rng);
            if sym && mu.mass_where(&rect) != mu.mass_where(|p| rect(-p)) {
                violations += 1;
            }
            let inside = |p: Point2| region_contains(Region::R2, p) && rect(p);
            if strength && mu.mass_where(inside) > mu.mass_where(|q| inside(reflect(Reflection::Prime, q))) {
                violations += 1;
            }
        }
    }

    let mut kernels: Vec<_> = (0..100).map(|_| constructed_kernel(&mut rng)).collect();
    kernels.push(load("markov_cor3.json").processes[0].as_lattice().unwrap().clone());
    let (mut chains, mut step_failures) = (0, 0);
    for kernel in &kernels {
        let horizon = 8;
        if !check_t2_conditions(kernel, horizon).unwrap().passed() {
            continue;
        }
        chains += 1;
        for u in kernel.marginals(horizon).unwrap() {
            let mu = DiscreteJointMeasure::from_kernel(kernel, &u).unwrap();
            if !check_t1(&mu, 1e-10).passed() {
                step_failures += 1;
            }
        }
    }
    outcome(
        violations == 0 && step_failures == 0 && chains == kernels.len(),
        format!(
            "{measures} measures ({sym_pass} symmetric, {str_pass} strong) x 1000 rectangles: {violations} set-level violations; \
             {chains}/{} chains pass, {step_failures} induced step failures over k <= 8",
            kernels.len()
        ),
    )
}

fn run_cli(scenario: &Path, out: &Path, threads: &str) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_fundsim"))
        .arg("run")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .env("FUNDSIM_THREADS", threads)
        .output()
        .unwrap();
    assert!(
        matches!(status.status.code(), Some(0) | Some(3)),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    std::fs::read(out.join("report.csv")).unwrap()
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(fixture(""))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    for path in &names {
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let a = run_cli(path, &tmp.path().join(format!("{stem}-1")), "1");
        let b = run_cli(path, &tmp.path().join(format!("{stem}-4")), "4");
        if a != b {
            differing.push(stem);
        }
    }
    outcome(
        differing.is_empty() && !names.is_empty(),
        format!("{} fixtures, FUNDSIM_THREADS 1 vs 4, differing: {differing:?}", names.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("counterexample reproduction", criterion_1),
        ("remark flip", criterion_2),
        ("increasing expectation on a lattice chain", criterion_3),
        ("OU increments at 99% one-sided", criterion_4),
        ("AR(1) white-noise increments at 99% one-sided", criterion_5),
        ("analytics identities", criterion_6),
        ("engine cross-validation", criterion_7),
        ("condition-checker soundness", criterion_8),
        ("thread-count determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!("{} criterion {}: {name}: {}", if o.ok { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += !o.ok as usize;
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
