//! Condition checks, engine dispatch and verdicts for a whole scenario.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::conditions::{
    self, check_counterexample, check_t1, check_t1_mass_r1, check_t2_conditions, check_t4_conditions,
    Check, ConditionReport, DiscreteJointMeasure, T4Bounds, Witness,
};
use crate::error::Result;
use crate::expectation::{exact_expected_log_ratio, mc_expected_log_ratio, LogRatioReport, Method};
use crate::processes::{LatticeKernel, ProcessSpec, PROB_TOL};
use crate::scenario::{CheckTag, Engine, Scenario};

/// Slack below zero still read as "non-decreasing" for exact values.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Consistent,
    Violated,
    Inapplicable,
}

/// What a result asserts about the expected log ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Step `k` increment is positive.
    Increase,
    /// Step `k` increment is non-negative.
    NonDecrease,
    /// Level at `t_{k+1}` lies below its value at `t_0`, which is zero.
    Decrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub k: usize,
    pub direction: Direction,
}

/// Conditions and predictions for one requested check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    pub theorem: CheckTag,
    pub applicable: bool,
    pub reports: Vec<ConditionReport>,
    pub predictions: Vec<Prediction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ConditionSet {
    fn new(theorem: CheckTag, reports: Vec<ConditionReport>, predictions: Vec<Prediction>) -> Self {
        Self {
            theorem,
            applicable: reports.iter().all(ConditionReport::passed),
            reports,
            predictions,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckedPrediction {
    pub k: usize,
    pub direction: Direction,
    pub estimate: f64,
    /// The one-sided bound tested against zero; the value itself for exact runs.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremVerdict {
    pub theorem: CheckTag,
    pub verdict: Verdict,
    pub predictions: Vec<CheckedPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub engine: Method,
    pub master_seed: u64,
    pub paths: u64,
    pub ci_level: f64,
    pub version: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub provenance: Provenance,
    pub report: LogRatioReport,
    pub conditions: Vec<ConditionSet>,
    pub verdicts: Vec<TheoremVerdict>,
}

impl RunSummary {
    pub fn any_violated(&self) -> bool {
        self.verdicts.iter().any(|v| v.verdict == Verdict::Violated)
    }

    pub fn verdict(&self, tag: CheckTag) -> Option<Verdict> {
        self.verdicts.iter().find(|v| v.theorem == tag).map(|v| v.verdict)
    }
}

/// Command-line overrides of a scenario's Monte Carlo settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    pub paths: Option<u64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

fn scope(stock: usize, step: Option<usize>) -> String {
    match step {
        Some(k) => format!("stock {}, step {k}", stock + 1),
        None => format!("stock {}", stock + 1),
    }
}

fn failed(theorem: &str, label: &str, witness: Witness) -> ConditionReport {
    let mut report = ConditionReport::new(theorem);
    let mut check = Check::new(label);
    check.fail(witness);
    report.push(check);
    report
}

fn range(s: &Scenario) -> std::ops::Range<usize> {
    s.m1 - 1..s.m2
}

/// Lattice kernels of the stocks in `m1..=m2`, or a failing report naming
/// the first stock that is not one.
fn range_kernels<'a>(s: &'a Scenario, theorem: &str) -> std::result::Result<Vec<(usize, &'a LatticeKernel)>, ConditionReport> {
    range(s)
        .map(|i| match s.processes[i].as_lattice() {
            Some(k) => Ok((i, k)),
            None => Err(failed(
                theorem,
                &format!("{theorem}.lattice"),
                Witness::at_index(i + 1, -1.0, "needs a lattice kernel"),
            )),
        })
        .collect()
}

fn step_measures(kernel: &LatticeKernel, steps: usize) -> Result<Vec<DiscreteJointMeasure>> {
    let u = kernel.marginals(steps)?;
    (0..steps).map(|k| DiscreteJointMeasure::from_kernel(kernel, &u[k])).collect()
}

fn check_t1_tag(s: &Scenario) -> Result<ConditionSet> {
    let steps = s.schedule.steps();
    let kernels = match range_kernels(s, "t1") {
        Ok(k) => k,
        Err(report) => return Ok(ConditionSet::new(CheckTag::T1, vec![report], Vec::new())),
    };
    let mut reports = Vec::new();
    let mut mass = vec![0.0; steps];
    for (i, kernel) in kernels {
        for (k, mu) in step_measures(kernel, steps)?.iter().enumerate() {
            reports.push(check_t1(mu, PROB_TOL).with_scope(scope(i, Some(k))));
            mass[k] += check_t1_mass_r1(mu);
        }
    }
    let predictions = mass
        .iter()
        .enumerate()
        .map(|(k, &m)| Prediction {
            k,
            direction: if m > 0.0 { Direction::Increase } else { Direction::NonDecrease },
        })
        .collect();
    Ok(ConditionSet::new(CheckTag::T1, reports, predictions))
}

/// Chain conditions; increments after the first are strict, the first
/// follows the unconditional result at step 0.
fn check_chain_tag(s: &Scenario, tag: CheckTag) -> Result<ConditionSet> {
    let steps = s.schedule.steps();
    let kernels = match range_kernels(s, tag.as_str()) {
        Ok(k) => k,
        Err(report) => return Ok(ConditionSet::new(tag, vec![report], Vec::new())),
    };
    let mut reports = Vec::new();
    let mut mass0 = 0.0;
    for (i, kernel) in kernels {
        let mut report = check_t2_conditions(kernel, steps)?.with_scope(scope(i, None));
        report.theorem = tag.as_str().to_string();
        reports.push(report);
        let mu0 = DiscreteJointMeasure::from_kernel(kernel, kernel.init())?;
        mass0 += check_t1_mass_r1(&mu0);
    }
    let predictions = (0..steps)
        .map(|k| Prediction {
            k,
            direction: if k > 0 || mass0 > 0.0 { Direction::Increase } else { Direction::NonDecrease },
        })
        .collect();
    Ok(ConditionSet::new(tag, reports, predictions))
}

fn check_t4_tag(s: &Scenario) -> Result<ConditionSet> {
    let steps = s.schedule.steps();
    let settings = s.t4.expect("validated");
    let kernels = match range_kernels(s, "t4") {
        Ok(k) => k,
        Err(report) => return Ok(ConditionSet::new(CheckTag::T4, vec![report], Vec::new())),
    };
    let mut reports = Vec::new();
    let mut mass = vec![0.0; steps];
    for (i, kernel) in kernels {
        let f = s.fundamentals.stock(i);
        for (k, mu) in step_measures(kernel, steps)?.iter().enumerate() {
            let r = conditions::admissible_r_values(mu, settings.delta1, settings.delta2, settings.r_margin)?;
            let bounds = T4Bounds {
                delta1: settings.delta1,
                delta2: settings.delta2,
                d_log_f: (f[k + 1] / f[k]).ln().abs(),
                kernel_bound: mu.max_abs_increment(),
            };
            reports.push(check_t4_conditions(mu, &r, bounds, PROB_TOL)?.with_scope(scope(i, Some(k))));
            mass[k] += check_t1_mass_r1(mu);
        }
    }
    let mut positive = ConditionReport::new("t4");
    let mut check = Check::new("t4.mass_r1");
    for (k, &m) in mass.iter().enumerate() {
        check.observe(m, m > 0.0, || Witness::at_index(k, m, "no mass on R_1 at this step"));
    }
    positive.push(check);
    reports.push(positive);
    let predictions = (0..steps)
        .map(|k| Prediction {
            k,
            direction: Direction::Increase,
        })
        .collect();
    Ok(ConditionSet::new(CheckTag::T4, reports, predictions))
}

fn check_t5_tag(s: &Scenario) -> Result<ConditionSet> {
    let prediction = vec![Prediction {
        k: s.schedule.steps().saturating_sub(1),
        direction: Direction::Decrease,
    }];
    if (s.m1, s.m2) != (1, 2) || s.n() != 2 {
        let report = failed(
            "t5",
            "t5.setup",
            Witness::note("needs two stocks with m1 = 1 and m2 = 2", -1.0),
        );
        return Ok(ConditionSet::new(CheckTag::T5, vec![report], prediction));
    }
    let (Some(moving), Some(pinned)) = (s.processes[0].as_lattice(), s.processes[1].as_lattice()) else {
        let report = failed("t5", "t5.setup", Witness::note("both stocks must be lattice kernels", -1.0));
        return Ok(ConditionSet::new(CheckTag::T5, vec![report], prediction));
    };
    let report = check_counterexample(moving, pinned, &s.fundamentals, &s.schedule)?;
    Ok(ConditionSet::new(CheckTag::T5, vec![report], prediction))
}

fn all_steps_increase(s: &Scenario) -> Vec<Prediction> {
    (0..s.schedule.steps())
        .map(|k| Prediction {
            k,
            direction: Direction::Increase,
        })
        .collect()
}

fn check_cor1_tag(s: &Scenario) -> ConditionSet {
    let mut specs = Vec::new();
    let mut kind = Check::new("cor1.process");
    for i in range(s) {
        match &s.processes[i] {
            ProcessSpec::Ou(ou) => specs.push(ou.clone()),
            _ => kind.fail(Witness::at_index(i + 1, -1.0, "needs an Ornstein-Uhlenbeck process")),
        }
    }
    let mut report = ConditionReport::new("cor1");
    report.push(kind);
    report.merge(conditions::check_cor1(&specs, &s.schedule));
    ConditionSet::new(CheckTag::Cor1, vec![report], all_steps_increase(s))
}

fn check_cor2_tag(s: &Scenario) -> ConditionSet {
    let mut specs = Vec::new();
    let mut kind = Check::new("cor2.process");
    for i in range(s) {
        match &s.processes[i] {
            ProcessSpec::Ar1(ar) => specs.push(ar.clone()),
            _ => kind.fail(Witness::at_index(i + 1, -1.0, "needs an AR(1) process")),
        }
    }
    let mut report = ConditionReport::new("cor2");
    report.push(kind);
    report.merge(conditions::check_cor2(&specs));
    let mut set = ConditionSet::new(CheckTag::Cor2, vec![report], all_steps_increase(s));
    if specs.iter().any(|a| !a.noise.unbounded_above()) {
        set.warnings
            .push("bounded noise: P(Z > a) > 0 fails for large a, so the AR(1) result does not apply".into());
    }
    set
}

/// Runs every requested check without simulating.
pub fn check_scenario(s: &Scenario) -> Result<Vec<ConditionSet>> {
    s.checks
        .iter()
        .map(|&tag| match tag {
            CheckTag::T1 => check_t1_tag(s),
            CheckTag::T2 | CheckTag::Cor3 => check_chain_tag(s, tag),
            CheckTag::T4 => check_t4_tag(s),
            CheckTag::T5 => check_t5_tag(s),
            CheckTag::Cor1 => Ok(check_cor1_tag(s)),
            CheckTag::Cor2 => Ok(check_cor2_tag(s)),
        })
        .collect()
}

fn judge(set: &ConditionSet, report: &LogRatioReport) -> TheoremVerdict {
    let exact = report.method() == Method::Exact;
    let z1 = Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(report.ci_level);
    let predictions: Vec<CheckedPrediction> = set
        .predictions
        .iter()
        .filter(|p| p.k < report.increments.len())
        .map(|p| {
            let (estimate, bound, holds) = match p.direction {
                Direction::Increase | Direction::NonDecrease => {
                    let inc = &report.increments[p.k];
                    let bound = if exact { inc.estimate } else { inc.upper };
                    let holds = if p.direction == Direction::Increase {
                        bound > 0.0
                    } else {
                        bound >= -EXACT_TOL
                    };
                    (inc.estimate, bound, holds)
                }
                Direction::Decrease => {
                    let e = &report.entries[p.k + 1];
                    let bound = if exact { e.estimate } else { e.estimate - z1 * e.stderr };
                    (e.estimate, bound, bound < 0.0)
                }
            };
            CheckedPrediction {
                k: p.k,
                direction: p.direction,
                estimate,
                bound,
                holds,
            }
        })
        .collect();
    let verdict = if !set.applicable {
        Verdict::Inapplicable
    } else if predictions.iter().any(|p| !p.holds) {
        Verdict::Violated
    } else {
        Verdict::Consistent
    };
    TheoremVerdict {
        theorem: set.theorem,
        verdict,
        predictions,
    }
}

/// Checks conditions, runs the engine and forms a verdict per check.
pub fn run_scenario(scenario: &Scenario, options: RunOptions) -> Result<RunSummary> {
    let mut s = scenario.clone();
    if let Some(p) = options.paths {
        s.mc.paths = p;
    }
    if let Some(seed) = options.seed {
        s.mc.master_seed = seed;
    }
    if options.threads.is_some() {
        s.mc.threads = options.threads;
    }
    s.mc.validate()?;

    let conditions = check_scenario(&s)?;
    let report = match s.resolved_engine() {
        Engine::Exact => exact_expected_log_ratio(&s)?,
        _ => mc_expected_log_ratio(&s, &s.mc)?,
    };
    let verdicts = conditions.iter().map(|c| judge(c, &report)).collect();
    let method = report.method();
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    Ok(RunSummary {
        scenario: s.name.clone(),
        provenance: Provenance {
            engine: method,
            master_seed: s.mc.master_seed,
            paths: if method == Method::Exact { 0 } else { s.mc.paths },
            ci_level: s.mc.ci_level,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
        },
        report,
        conditions,
        verdicts,
    })
}

/// Writes `report.csv`, `report.json` and `conditions.json` into `dir`.
pub fn write_outputs(summary: &RunSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    summary.report.write_csv(fs::File::create(dir.join("report.csv"))?)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(summary)?)?;
    write_conditions(&summary.conditions, dir)
}

pub fn write_conditions(conditions: &[ConditionSet], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("conditions.json"), serde_json::to_string_pretty(conditions)?)?;
    Ok(())
}
