//! Scenario files: parsing, validation and the in-memory model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use crate::analytics;
use crate::error::{Diagnostic, Error, Result};
use crate::expectation::{exact_step_sizes, McSettings, MAX_JOINT_OUTCOMES};
use crate::market::{FundamentalPath, RebalanceSchedule};
use crate::processes::{LatticeKernel, LatticePmf, ProcessSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Exact,
    Mc,
    #[default]
    Auto,
}

/// Result families a scenario can be checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckTag {
    /// Unconditional-measure symmetry and reversion strength.
    T1,
    /// Conditional form, checked through the chain conditions.
    T2,
    /// Relaxed reversion strength with bounded moves.
    T4,
    /// The two-stock underperformance construction.
    T5,
    /// Ornstein-Uhlenbeck spacing.
    Cor1,
    /// AR(1) with `theta <= 1/2`.
    Cor2,
    /// Lattice Markov chains.
    Cor3,
}

impl CheckTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckTag::T1 => "t1",
            CheckTag::T2 => "t2",
            CheckTag::T4 => "t4",
            CheckTag::T5 => "t5",
            CheckTag::Cor1 => "cor1",
            CheckTag::Cor2 => "cor2",
            CheckTag::Cor3 => "cor3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T4Settings {
    pub delta1: f64,
    pub delta2: f64,
    /// Slack added to the threshold when choosing `r`.
    #[serde(default = "default_r_margin")]
    pub r_margin: f64,
}

fn default_r_margin() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FundamentalSeries {
    Constant(f64),
    Path(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fundamentals {
    /// One level shared by every stock at every time.
    Shared(f64),
    PerStock(Vec<FundamentalSeries>),
}

/// The on-disk scenario format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub n: usize,
    pub schedule: Vec<f64>,
    pub fundamentals: Fundamentals,
    pub processes: Vec<ProcessSpec>,
    pub m1: usize,
    pub m2: usize,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub checks: Vec<CheckTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t4: Option<T4Settings>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: Option<String>,
    pub schedule: RebalanceSchedule,
    pub fundamentals: FundamentalPath,
    pub processes: Vec<ProcessSpec>,
    pub m1: usize,
    pub m2: usize,
    pub engine: Engine,
    pub mc: McSettings,
    pub checks: Vec<CheckTag>,
    pub t4: Option<T4Settings>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => {
                out.push('/');
                out.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Enum { .. } | Segment::Unknown => {}
        }
    }
    out
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            Error::Validation(vec![Diagnostic::new(pointer, e.inner().to_string())])
        })
    }

    /// Checks every stated invariant, collecting all diagnostics.
    pub fn validate(&self) -> Result<Scenario> {
        let mut diags = Vec::new();
        let mut err = |pointer: &str, msg: String| diags.push(Diagnostic::new(pointer, msg));

        if self.n < 2 {
            err("/n", format!("needs at least two stocks, got {}", self.n));
        }
        let schedule = match RebalanceSchedule::new(self.schedule.clone()) {
            Ok(s) => Some(s),
            Err(e) => {
                err("/schedule", strip_domain(e));
                None
            }
        };
        let times = self.schedule.len();

        let fundamentals: Vec<Vec<f64>> = match &self.fundamentals {
            Fundamentals::Shared(v) => vec![vec![*v; times]; self.n],
            Fundamentals::PerStock(list) => {
                if list.len() != self.n {
                    err("/fundamentals", format!("expected {} entries, got {}", self.n, list.len()));
                }
                list.iter()
                    .enumerate()
                    .map(|(i, series)| match series {
                        FundamentalSeries::Constant(v) => vec![*v; times],
                        FundamentalSeries::Path(path) => {
                            if path.len() != times {
                                err(
                                    &format!("/fundamentals/{i}"),
                                    format!("expected {times} values to match the schedule, got {}", path.len()),
                                );
                            }
                            path.clone()
                        }
                    })
                    .collect()
            }
        };
        for (i, row) in fundamentals.iter().enumerate() {
            if let Some(k) = row.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                let pointer = match &self.fundamentals {
                    Fundamentals::Shared(_) => "/fundamentals".to_string(),
                    Fundamentals::PerStock(list) => match list.get(i) {
                        Some(FundamentalSeries::Path(_)) => format!("/fundamentals/{i}/{k}"),
                        _ => format!("/fundamentals/{i}"),
                    },
                };
                err(&pointer, format!("fundamental {} must be finite and positive", row[k]));
                if matches!(self.fundamentals, Fundamentals::Shared(_)) {
                    break;
                }
            }
        }

        if self.processes.len() != self.n {
            err("/processes", format!("expected {} processes, got {}", self.n, self.processes.len()));
        }
        for (i, p) in self.processes.iter().enumerate() {
            for d in p.validate(&format!("/processes/{i}")) {
                diags.push(d);
            }
        }
        let mut err = |pointer: &str, msg: String| diags.push(Diagnostic::new(pointer, msg));
        if let Some(schedule) = &schedule {
            for (i, p) in self.processes.iter().enumerate() {
                if let Some(kernel) = p.as_lattice() {
                    if let Err(e) = kernel.states_needing_rows(schedule.steps()) {
                        err(&format!("/processes/{i}/transitions"), strip_domain(e));
                    }
                }
            }
        }

        if self.m1 < 1 {
            err("/m1", "m1 must be ≥ 1".into());
        }
        if self.m2 < self.m1 {
            err("/m2", format!("m2 = {} must be ≥ m1 = {}", self.m2, self.m1));
        }
        if self.m2 > self.n {
            err("/m2", format!("m2 = {} must be ≤ n = {}", self.m2, self.n));
        }
        if let Err(e) = self.mc.validate() {
            err("/mc", strip_domain(e));
        }
        if self.engine == Engine::Exact {
            if let Some(i) = self.processes.iter().position(|p| p.as_lattice().is_none()) {
                err(&format!("/processes/{i}"), "exact engine needs a lattice kernel for every stock".into());
            }
        }

        if self.checks.contains(&CheckTag::T4) {
            match &self.t4 {
                None => err("/t4", "check t4 needs delta1 and delta2".into()),
                Some(t4) => {
                    if !(t4.delta1.is_finite() && t4.delta1 > 0.0) {
                        err("/t4/delta1", "must be finite and positive".into());
                    }
                    if !(t4.delta2.is_finite() && t4.delta2 > 0.0) {
                        err("/t4/delta2", "must be finite and positive".into());
                    }
                    if !(t4.r_margin.is_finite() && t4.r_margin >= 0.0) {
                        err("/t4/r_margin", "must be finite and non-negative".into());
                    }
                }
            }
        }

        if !diags.is_empty() {
            return Err(Error::Validation(diags));
        }
        let fundamentals = FundamentalPath::new(fundamentals).map_err(|e| {
            Error::Validation(vec![Diagnostic::new("/fundamentals", strip_domain(e))])
        })?;
        let mut checks = self.checks.clone();
        checks.sort();
        checks.dedup();
        Ok(Scenario {
            name: self.name.clone(),
            schedule: schedule.expect("validated"),
            fundamentals,
            processes: self.processes.clone(),
            m1: self.m1,
            m2: self.m2,
            engine: self.engine,
            mc: self.mc.clone(),
            checks,
            t4: self.t4,
        })
    }
}

fn strip_domain(e: Error) -> String {
    match e {
        Error::Domain(msg) => msg,
        other => other.to_string(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        ScenarioFile::from_json(text)?.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn n(&self) -> usize {
        self.processes.len()
    }

    pub fn all_lattice(&self) -> bool {
        self.processes.iter().all(|p| p.as_lattice().is_some())
    }

    /// The engine `auto` resolves to: exact when every stock is a lattice
    /// chain and every step fits the enumeration budget.
    pub fn resolved_engine(&self) -> Engine {
        match self.engine {
            Engine::Auto => {
                let fits = self.all_lattice()
                    && exact_step_sizes(self)
                        .map(|sizes| sizes.iter().all(|&s| s <= MAX_JOINT_OUTCOMES))
                        .unwrap_or(false);
                if fits {
                    Engine::Exact
                } else {
                    Engine::Mc
                }
            }
            e => e,
        }
    }

    /// Two-stock, one-step construction: stock 1 starts at `+-s` and moves
    /// to `2s` with probability `m_up` or back to `0`; stock 2 sits at its
    /// fundamental `A`. Missing overrides come from
    /// [`analytics::build_counterexample`].
    pub fn counterexample(s: f64, m_up: Option<f64>, a: Option<f64>) -> Result<Self> {
        analytics::counterexample_limit_r(s)?;
        let built = match (m_up, a) {
            (Some(_), Some(_)) => None,
            _ => Some(analytics::build_counterexample(s)?),
        };
        let m_up = m_up.unwrap_or_else(|| built.expect("built").m_up);
        let a = a.unwrap_or_else(|| built.expect("built").a);
        if !(0.0..=1.0).contains(&m_up) {
            return Err(Error::Domain(format!("m_up = {m_up} must lie in [0, 1]")));
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Domain(format!("A = {a} must be positive")));
        }
        let rows = BTreeMap::from([
            (1, vec![(2, m_up), (0, 1.0 - m_up)]),
            (-1, vec![(-2, m_up), (0, 1.0 - m_up)]),
        ]);
        let moving = LatticeKernel::new(s, rows, LatticePmf::new([(1, 0.5), (-1, 0.5)])?)?;
        Ok(Scenario {
            name: Some(format!("counterexample s={s}")),
            schedule: RebalanceSchedule::unit(1)?,
            fundamentals: FundamentalPath::constant(&[1.0, a], 2)?,
            processes: vec![
                ProcessSpec::Lattice(moving),
                ProcessSpec::Lattice(LatticeKernel::constant_zero()),
            ],
            m1: 1,
            m2: 2,
            engine: Engine::Exact,
            mc: McSettings::default(),
            checks: vec![CheckTag::T1, CheckTag::T5],
            t4: None,
        })
    }

    /// The file form of this scenario, with per-stock fundamental paths.
    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            name: self.name.clone(),
            description: None,
            n: self.n(),
            schedule: self.schedule.times().to_vec(),
            fundamentals: Fundamentals::PerStock(
                (0..self.n())
                    .map(|i| FundamentalSeries::Path(self.fundamentals.stock(i).to_vec()))
                    .collect(),
            ),
            processes: self.processes.clone(),
            m1: self.m1,
            m2: self.m2,
            engine: self.engine,
            mc: self.mc.clone(),
            checks: self.checks.clone(),
            t4: self.t4,
        }
    }
}
