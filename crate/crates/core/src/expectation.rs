//! Expected log value ratio `E log V_{pi^{m2}} / V_{pi^{m1-1}}` at every
//! rebalancing time, by exact enumeration over lattice chains or by Monte
//! Carlo over independent paths.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{domain, Error, Result};
use crate::market::pair_increment_raw;
use crate::processes::{LatticeKernel, PathSampler};
use crate::rng::{substream, MAX_PATHS, MAX_STOCKS};
use crate::scenario::Scenario;

/// Cap on the joint outcomes enumerated in one step.
pub const MAX_JOINT_OUTCOMES: u128 = 1_000_000;

/// Paths per reduction chunk. Fixed so the reduction tree, and hence every
/// bit of the result, does not depend on the worker count.
pub const CHUNK_PATHS: u64 = 1024;

pub const DEFAULT_CI_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    #[serde(default = "default_paths")]
    pub paths: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    /// Worker cap; `None` uses rayon's default. Never changes results.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

fn default_paths() -> u64 {
    100_000
}

fn default_ci_level() -> f64 {
    DEFAULT_CI_LEVEL
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            master_seed: 0,
            ci_level: DEFAULT_CI_LEVEL,
            threads: None,
        }
    }
}

impl McSettings {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 || self.paths > MAX_PATHS {
            return Err(domain(format!("paths = {} must be in 1..={MAX_PATHS}", self.paths)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(domain(format!("ci_level = {} must lie in (0, 1)", self.ci_level)));
        }
        if self.threads == Some(0) {
            return Err(domain("threads must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the per-time table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRatioEntry {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: Method,
    pub paths: u64,
}

/// `E log ratio(t_{k+1}) - E log ratio(t_k)`, with one-sided bounds at the
/// report's `ci_level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementEntry {
    pub k: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRatioReport {
    pub m1: usize,
    pub m2: usize,
    pub ci_level: f64,
    pub entries: Vec<LogRatioEntry>,
    pub increments: Vec<IncrementEntry>,
}

impl LogRatioReport {
    pub fn method(&self) -> Method {
        self.entries[0].method
    }

    pub fn final_estimate(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.estimate)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

fn lattice_kernels(scenario: &Scenario) -> Result<Vec<&LatticeKernel>> {
    scenario
        .processes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.as_lattice()
                .ok_or_else(|| domain(format!("exact engine needs a lattice kernel for stock {}", i + 1)))
        })
        .collect()
}

/// Joint outcome count of step `k` for the given per-stock transition lists.
fn joint_size(pairs: &[Vec<(f64, f64, f64)>]) -> u128 {
    pairs.iter().fold(1u128, |acc, p| acc.saturating_mul(p.len() as u128))
}

/// Number of joint outcomes the exact engine would enumerate at each step.
pub fn exact_step_sizes(scenario: &Scenario) -> Result<Vec<u128>> {
    let kernels = lattice_kernels(scenario)?;
    let steps = scenario.schedule.steps();
    let marginals = kernels
        .iter()
        .map(|k| k.marginals(steps))
        .collect::<Result<Vec<_>>>()?;
    (0..steps)
        .map(|k| {
            let pairs = step_pairs(&kernels, &marginals, k)?;
            Ok(joint_size(&pairs))
        })
        .collect()
}

/// Per-stock `(y_k, y_{k+1}, probability)` lists for step `k`.
fn step_pairs(
    kernels: &[&LatticeKernel],
    marginals: &[Vec<crate::processes::LatticePmf>],
    k: usize,
) -> Result<Vec<Vec<(f64, f64, f64)>>> {
    kernels
        .iter()
        .zip(marginals)
        .map(|(kernel, u)| {
            let s = kernel.s();
            let mut out = Vec::new();
            for (a, w) in u[k].iter().filter(|(_, w)| *w > 0.0) {
                for &(b, p) in kernel.row(a)? {
                    if p > 0.0 {
                        out.push((a as f64 * s, b as f64 * s, w * p));
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

fn ratios_into(f_k: &[f64], f_k1: &[f64], y_k: &[f64], y_k1: &[f64], x: &mut [f64], r: &mut [f64]) {
    for i in 0..f_k.len() {
        x[i] = f_k[i] * y_k[i].exp();
        r[i] = (f_k1[i] / f_k[i]) * (y_k1[i] - y_k[i]).exp();
    }
}

fn exact_report(scenario: &Scenario, increments: Vec<f64>) -> LogRatioReport {
    let times = scenario.schedule.times();
    let mut entries = Vec::with_capacity(times.len());
    let mut level = KahanSum::default();
    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            level.add(increments[k - 1]);
        }
        let v = level.value();
        entries.push(LogRatioEntry {
            t,
            estimate: v,
            stderr: 0.0,
            ci_low: v,
            ci_high: v,
            method: Method::Exact,
            paths: 0,
        });
    }
    LogRatioReport {
        m1: scenario.m1,
        m2: scenario.m2,
        ci_level: scenario.mc.ci_level,
        entries,
        increments: increments
            .into_iter()
            .enumerate()
            .map(|(k, d)| IncrementEntry {
                k,
                estimate: d,
                stderr: 0.0,
                lower: d,
                upper: d,
            })
            .collect(),
    }
}

/// Exact expectation for scenarios whose stocks all follow lattice kernels.
///
/// Stocks are independent, so step `k` only needs the product of the
/// per-stock laws of `(Y(t_k), Y(t_{k+1}))`; the expected log ratio at `t_k`
/// is the sum of the expected step increments before it.
pub fn exact_expected_log_ratio(scenario: &Scenario) -> Result<LogRatioReport> {
    let kernels = lattice_kernels(scenario)?;
    let steps = scenario.schedule.steps();
    let marginals = kernels
        .iter()
        .map(|k| k.marginals(steps))
        .collect::<Result<Vec<_>>>()?;
    let n = kernels.len();
    let (hi, lo) = (scenario.m2, scenario.m1 - 1);

    let mut increments = Vec::with_capacity(steps);
    for k in 0..steps {
        let pairs = step_pairs(&kernels, &marginals, k)?;
        let size = joint_size(&pairs);
        if size > MAX_JOINT_OUTCOMES {
            return Err(Error::Budget {
                step: k,
                size,
                cap: MAX_JOINT_OUTCOMES,
            });
        }
        let f_k = scenario.fundamentals.at(k);
        let f_k1 = scenario.fundamentals.at(k + 1);
        let (mut y0, mut y1) = (vec![0.0; n], vec![0.0; n]);
        let (mut x, mut r) = (vec![0.0; n], vec![0.0; n]);
        let mut idx = vec![0usize; n];
        let mut acc = KahanSum::default();
        loop {
            let mut prob = 1.0;
            for i in 0..n {
                let (a, b, p) = pairs[i][idx[i]];
                y0[i] = a;
                y1[i] = b;
                prob *= p;
            }
            ratios_into(&f_k, &f_k1, &y0, &y1, &mut x, &mut r);
            let d = pair_increment_raw(hi, lo, &x, &f_k, &r);
            if !d.is_finite() {
                return Err(domain(format!("non-finite log ratio increment at step {k}")));
            }
            acc.add(prob * d);

            let mut i = 0;
            loop {
                if i == n {
                    break;
                }
                idx[i] += 1;
                if idx[i] < pairs[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == n {
                break;
            }
        }
        increments.push(acc.value());
    }
    Ok(exact_report(scenario, increments))
}

/// Welford accumulator; merged with Chan's pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb, nt) = (self.n as f64, other.n as f64, n as f64);
        Moments {
            n,
            mean: self.mean + delta * nb / nt,
            m2: self.m2 + other.m2 + delta * delta * na * nb / nt,
        }
    }

    /// Standard error of the mean; zero with fewer than two samples.
    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Per-time statistics of the log ratio and of its step increments.
#[derive(Debug, Clone, PartialEq)]
struct PathStats {
    levels: Vec<Moments>,
    steps: Vec<Moments>,
}

impl PathStats {
    fn new(steps: usize) -> Self {
        Self {
            levels: vec![Moments::default(); steps],
            steps: vec![Moments::default(); steps],
        }
    }

    fn merge(mut self, other: &PathStats) -> Self {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            *a = a.merge(*b);
        }
        for (a, b) in self.steps.iter_mut().zip(&other.steps) {
            *a = a.merge(*b);
        }
        self
    }
}

struct PathKernel<'a> {
    scenario: &'a Scenario,
    samplers: Vec<PathSampler>,
    fundamentals: Vec<Vec<f64>>,
}

impl PathKernel<'_> {
    fn run_chunk(&self, seed: u64, paths: std::ops::Range<u64>) -> Result<PathStats> {
        let n = self.samplers.len();
        let steps = self.scenario.schedule.steps();
        let (hi, lo) = (self.scenario.m2, self.scenario.m1 - 1);
        let mut stats = PathStats::new(steps);
        let mut ys = vec![vec![0.0; steps + 1]; n];
        let (mut y0, mut y1) = (vec![0.0; n], vec![0.0; n]);
        let (mut x, mut r) = (vec![0.0; n], vec![0.0; n]);
        for path in paths {
            for (i, sampler) in self.samplers.iter().enumerate() {
                let mut rng = substream(seed, path, i);
                sampler.sample_into(&mut rng, &mut ys[i]);
            }
            let mut level = 0.0;
            for k in 0..steps {
                for i in 0..n {
                    y0[i] = ys[i][k];
                    y1[i] = ys[i][k + 1];
                }
                let (f_k, f_k1) = (&self.fundamentals[k], &self.fundamentals[k + 1]);
                ratios_into(f_k, f_k1, &y0, &y1, &mut x, &mut r);
                let d = pair_increment_raw(hi, lo, &x, f_k, &r);
                if !d.is_finite() {
                    return Err(domain(format!("non-finite log ratio increment on path {path}, step {k}")));
                }
                level += d;
                stats.steps[k].push(d);
                stats.levels[k].push(level);
            }
        }
        Ok(stats)
    }
}

fn z_two_sided(level: f64) -> f64 {
    standard_normal().inverse_cdf(0.5 + level / 2.0)
}

fn z_one_sided(level: f64) -> f64 {
    standard_normal().inverse_cdf(level)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Monte Carlo estimate over `settings.paths` independent paths; stock `i`
/// on path `p` draws from its own counter-based substream.
pub fn mc_expected_log_ratio(scenario: &Scenario, settings: &McSettings) -> Result<LogRatioReport> {
    settings.validate()?;
    if scenario.processes.len() > MAX_STOCKS {
        return Err(domain(format!("at most {MAX_STOCKS} stocks are supported")));
    }
    let samplers = scenario
        .processes
        .iter()
        .map(|p| PathSampler::new(p, &scenario.schedule))
        .collect::<Result<Vec<_>>>()?;
    let kernel = PathKernel {
        scenario,
        samplers,
        fundamentals: (0..scenario.schedule.len()).map(|k| scenario.fundamentals.at(k)).collect(),
    };
    let steps = scenario.schedule.steps();
    let chunks: Vec<_> = (0..settings.paths.div_ceil(CHUNK_PATHS))
        .map(|c| c * CHUNK_PATHS..((c + 1) * CHUNK_PATHS).min(settings.paths))
        .collect();
    let seed = settings.master_seed;
    let work = || {
        chunks
            .par_iter()
            .map(|range| kernel.run_chunk(seed, range.clone()))
            .collect::<Result<Vec<_>>>()
    };
    let parts = match settings.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| domain(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let stats = parts
        .iter()
        .fold(PathStats::new(steps), |acc, part| acc.merge(part));

    let z2 = z_two_sided(settings.ci_level);
    let z1 = z_one_sided(settings.ci_level);
    let times = scenario.schedule.times();
    let mut entries = vec![LogRatioEntry {
        t: times[0],
        estimate: 0.0,
        stderr: 0.0,
        ci_low: 0.0,
        ci_high: 0.0,
        method: Method::Mc,
        paths: settings.paths,
    }];
    for (k, m) in stats.levels.iter().enumerate() {
        let se = m.stderr();
        entries.push(LogRatioEntry {
            t: times[k + 1],
            estimate: m.mean,
            stderr: se,
            ci_low: m.mean - z2 * se,
            ci_high: m.mean + z2 * se,
            method: Method::Mc,
            paths: settings.paths,
        });
    }
    let increments = stats
        .steps
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let se = m.stderr();
            IncrementEntry {
                k,
                estimate: m.mean,
                stderr: se,
                lower: m.mean - z1 * se,
                upper: m.mean + z1 * se,
            }
        })
        .collect();
    Ok(LogRatioReport {
        m1: scenario.m1,
        m2: scenario.m2,
        ci_level: settings.ci_level,
        entries,
        increments,
    })
}

/// Discrepancy between the two engines on an enumerable scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineComparison {
    pub max_abs: f64,
    /// Largest `|mc - exact| / stderr`; zero where both agree exactly.
    pub max_z: f64,
    pub exact: LogRatioReport,
    pub mc: LogRatioReport,
}

impl EngineComparison {
    pub fn within(&self, z: f64) -> bool {
        self.max_z <= z
    }
}

pub fn compare_engines(scenario: &Scenario, settings: &McSettings) -> Result<EngineComparison> {
    let exact = exact_expected_log_ratio(scenario)?;
    let mc = mc_expected_log_ratio(scenario, settings)?;
    let mut max_abs: f64 = 0.0;
    let mut max_z: f64 = 0.0;
    for (e, m) in exact.entries.iter().zip(&mc.entries) {
        let diff = (m.estimate - e.estimate).abs();
        max_abs = max_abs.max(diff);
        if diff > 0.0 {
            max_z = max_z.max(if m.stderr > 0.0 { diff / m.stderr } else { f64::INFINITY });
        }
    }
    Ok(EngineComparison {
        max_abs,
        max_z,
        exact,
        mc,
    })
}
