//! Reverting processes `Y_m`: Ornstein-Uhlenbeck, AR(1) and finite lattice
//! chains, together with their exact samplers.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analytics::Point2;
use crate::error::{domain, Diagnostic, Error, Result};
use crate::market::RebalanceSchedule;

/// Probabilities are compared with this absolute tolerance.
pub const PROB_TOL: f64 = 1e-12;

/// A finite pmf on the integer lattice; state `k` stands for `y = k * s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(i64, f64)>", into = "Vec<(i64, f64)>")]
pub struct LatticePmf {
    points: BTreeMap<i64, f64>,
}

impl LatticePmf {
    pub fn new(points: impl IntoIterator<Item = (i64, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, w) in points {
            if !(w.is_finite() && (0.0..=1.0).contains(&w)) {
                return Err(domain(format!("weight {w} at state {k} is not a probability")));
            }
            if map.insert(k, w).is_some() {
                return Err(domain(format!("state {k} listed twice")));
            }
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { points: map })
    }

    pub fn point_mass(k: i64) -> Self {
        Self {
            points: BTreeMap::from([(k, 1.0)]),
        }
    }

    pub fn mass(&self, k: i64) -> f64 {
        self.points.get(&k).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.points.iter().map(|(&k, &w)| (k, w))
    }

    /// States carrying positive mass.
    pub fn support(&self) -> impl Iterator<Item = i64> + '_ {
        self.points.iter().filter(|(_, &w)| w > 0.0).map(|(&k, _)| k)
    }

    pub fn len(&self) -> usize {
        self.support().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest `|w(k) - w(-k)|` over the support, and the state attaining it.
    pub fn asymmetry(&self) -> (f64, Option<i64>) {
        let mut worst = (0.0, None);
        for (k, w) in self.iter() {
            let diff = (w - self.mass(-k)).abs();
            if diff > worst.0 {
                worst = (diff, Some(k));
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry().0 <= tol
    }

    /// All mass on the zero state.
    pub fn is_trivial(&self) -> bool {
        self.support().all(|k| k == 0)
    }
}

impl TryFrom<Vec<(i64, f64)>> for LatticePmf {
    type Error = String;

    fn try_from(points: Vec<(i64, f64)>) -> std::result::Result<Self, String> {
        LatticePmf::new(points).map_err(|e| e.to_string())
    }
}

impl From<LatticePmf> for Vec<(i64, f64)> {
    fn from(pmf: LatticePmf) -> Self {
        pmf.points.into_iter().collect()
    }
}

/// Distribution symmetric about zero, used for initial values and AR(1) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymmetricDist {
    /// Mass 1/2 at each of `-v` and `v`.
    TwoPoint { v: f64 },
    Uniform { v: f64 },
    Normal { sigma: f64 },
    /// Lattice pmf scaled by `step`.
    LatticePmf { step: f64, pmf: LatticePmf },
}

impl SymmetricDist {
    pub fn validate(&self, pointer: &str) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut need = |ok: bool, field: &str, msg: &str| {
            if !ok {
                out.push(Diagnostic::new(format!("{pointer}/{field}"), msg));
            }
        };
        match self {
            SymmetricDist::TwoPoint { v } | SymmetricDist::Uniform { v } => {
                need(v.is_finite() && *v >= 0.0, "v", "must be finite and non-negative")
            }
            SymmetricDist::Normal { sigma } => {
                need(sigma.is_finite() && *sigma >= 0.0, "sigma", "must be finite and non-negative")
            }
            SymmetricDist::LatticePmf { step, pmf } => {
                need(step.is_finite() && *step > 0.0, "step", "must be finite and positive");
                need(pmf.is_symmetric(PROB_TOL), "pmf", "weights must be symmetric about 0");
            }
        }
        out
    }

    /// Degenerate at zero.
    pub fn is_trivial(&self) -> bool {
        match self {
            SymmetricDist::TwoPoint { v } | SymmetricDist::Uniform { v } => *v == 0.0,
            SymmetricDist::Normal { sigma } => *sigma == 0.0,
            SymmetricDist::LatticePmf { pmf, .. } => pmf.is_trivial(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            SymmetricDist::LatticePmf { pmf, .. } => pmf.is_symmetric(PROB_TOL),
            _ => true,
        }
    }

    /// `P(Z > a) > 0` for every real `a`.
    pub fn unbounded_above(&self) -> bool {
        matches!(self, SymmetricDist::Normal { sigma } if *sigma > 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SymmetricDist::TwoPoint { v } => {
                if rng.random::<bool>() {
                    *v
                } else {
                    -*v
                }
            }
            SymmetricDist::Uniform { v } => *v * (2.0 * rng.random::<f64>() - 1.0),
            SymmetricDist::Normal { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                *sigma * z
            }
            SymmetricDist::LatticePmf { step, pmf } => {
                let draw = DiscreteSampler::new(pmf.iter()).sample(rng);
                *step * draw as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuSpec {
    pub theta: f64,
    pub sigma: f64,
    pub init: SymmetricDist,
}

impl OuSpec {
    pub fn validate(&self, pointer: &str) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if !(self.theta.is_finite() && self.theta > 0.0) {
            out.push(Diagnostic::new(format!("{pointer}/theta"), "must be finite and positive"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            out.push(Diagnostic::new(format!("{pointer}/sigma"), "must be finite and positive"));
        }
        out.extend(self.init.validate(&format!("{pointer}/init")));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Spec {
    pub theta: f64,
    pub noise: SymmetricDist,
    pub init: SymmetricDist,
}

impl Ar1Spec {
    pub fn validate(&self, pointer: &str) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if !self.theta.is_finite() {
            out.push(Diagnostic::new(format!("{pointer}/theta"), "must be finite"));
        }
        out.extend(self.noise.validate(&format!("{pointer}/noise")));
        out.extend(self.init.validate(&format!("{pointer}/init")));
        out
    }
}

/// Finite-support one-step transition law on the lattice `s * Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelFile", into = "KernelFile")]
pub struct LatticeKernel {
    s: f64,
    rows: BTreeMap<i64, Vec<(i64, f64)>>,
    init: LatticePmf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelRow {
    from: i64,
    to: Vec<(i64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelFile {
    s: f64,
    transitions: Vec<KernelRow>,
    init: LatticePmf,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    symmetric_completion: bool,
}

impl TryFrom<KernelFile> for LatticeKernel {
    type Error = String;

    fn try_from(file: KernelFile) -> std::result::Result<Self, String> {
        let mut rows = BTreeMap::new();
        for row in file.transitions {
            if rows.insert(row.from, row.to).is_some() {
                return Err(format!("transition row for state {} listed twice", row.from));
            }
        }
        let kernel = LatticeKernel::new(file.s, rows, file.init).map_err(|e| e.to_string())?;
        Ok(if file.symmetric_completion {
            kernel.with_symmetric_completion()
        } else {
            kernel
        })
    }
}

impl From<LatticeKernel> for KernelFile {
    fn from(k: LatticeKernel) -> Self {
        KernelFile {
            s: k.s,
            transitions: k
                .rows
                .into_iter()
                .map(|(from, to)| KernelRow { from, to })
                .collect(),
            init: k.init,
            symmetric_completion: false,
        }
    }
}

impl LatticeKernel {
    pub fn new(s: f64, rows: BTreeMap<i64, Vec<(i64, f64)>>, init: LatticePmf) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(domain(format!("lattice step s = {s} must be positive")));
        }
        for (from, row) in &rows {
            let mut seen = BTreeSet::new();
            for &(to, p) in row {
                if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                    return Err(domain(format!("P({from}, {to}) = {p} is not a probability")));
                }
                if !seen.insert(to) {
                    return Err(domain(format!("row {from} lists target {to} twice")));
                }
            }
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(domain(format!("row {from} sums to {total}, not 1")));
            }
        }
        Ok(Self { s, rows, init })
    }

    /// `Y` pinned at zero forever.
    pub fn constant_zero() -> Self {
        Self {
            s: 1.0,
            rows: BTreeMap::from([(0, vec![(0, 1.0)])]),
            init: LatticePmf::point_mass(0),
        }
    }

    /// Fills every missing row `-k` with the mirror image of row `k`.
    pub fn with_symmetric_completion(mut self) -> Self {
        let mirrored: Vec<_> = self
            .rows
            .iter()
            .filter(|(k, _)| !self.rows.contains_key(&-**k))
            .map(|(&k, row)| (-k, row.iter().map(|&(to, p)| (-to, p)).collect::<Vec<_>>()))
            .collect();
        self.rows.extend(mirrored);
        self
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn init(&self) -> &LatticePmf {
        &self.init
    }

    pub fn rows(&self) -> impl Iterator<Item = (i64, &[(i64, f64)])> + '_ {
        self.rows.iter().map(|(&k, row)| (k, row.as_slice()))
    }

    pub fn row(&self, k1: i64) -> Result<&[(i64, f64)]> {
        self.rows
            .get(&k1)
            .map(Vec::as_slice)
            .ok_or(Error::MissingRow { state: k1 })
    }

    /// `P(k1, k2)`; `None` when row `k1` is undefined.
    pub fn prob(&self, k1: i64, k2: i64) -> Option<f64> {
        self.rows.get(&k1).map(|row| {
            row.iter()
                .find(|(to, _)| *to == k2)
                .map_or(0.0, |(_, p)| *p)
        })
    }

    /// Conditional pmf of `(y, d_y)` given `Y(t_k) = k1 * s`.
    pub fn kernel_increment_pmf(&self, k1: i64) -> Result<Vec<(Point2, f64)>> {
        Ok(self
            .row(k1)?
            .iter()
            .map(|&(k2, p)| {
                (
                    Point2 {
                        y: k1 as f64 * self.s,
                        d_y: (k2 - k1) as f64 * self.s,
                    },
                    p,
                )
            })
            .collect())
    }

    /// One forward step of a pmf through the kernel.
    pub fn propagate(&self, pmf: &LatticePmf) -> Result<LatticePmf> {
        let mut next: BTreeMap<i64, f64> = BTreeMap::new();
        for (k1, w) in pmf.iter().filter(|(_, w)| *w > 0.0) {
            for &(k2, p) in self.row(k1)? {
                if p > 0.0 {
                    *next.entry(k2).or_insert(0.0) += w * p;
                }
            }
        }
        Ok(LatticePmf { points: next })
    }

    /// Marginals `u_0, ..., u_steps`; fails on the first reachable state
    /// without a row.
    pub fn marginals(&self, steps: usize) -> Result<Vec<LatticePmf>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(self.init.clone());
        for _ in 0..steps {
            let next = self.propagate(out.last().expect("non-empty"))?;
            out.push(next);
        }
        Ok(out)
    }

    /// Non-zero-probability targets reachable from `k1`.
    fn support_of(&self, k1: i64) -> Result<impl Iterator<Item = i64> + '_> {
        Ok(self.row(k1)?.iter().filter(|(_, p)| *p > 0.0).map(|(k2, _)| *k2))
    }

    /// States occupied with positive probability at some step `< steps`;
    /// these are exactly the states whose rows a `steps`-step run needs.
    pub fn states_needing_rows(&self, steps: usize) -> Result<BTreeSet<i64>> {
        let mut frontier: BTreeSet<i64> = self.init.support().collect();
        let mut all = BTreeSet::new();
        for _ in 0..steps {
            let mut next = BTreeSet::new();
            for &k in &frontier {
                next.extend(self.support_of(k)?);
            }
            all.extend(frontier);
            frontier = next;
        }
        Ok(all)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    Ou(OuSpec),
    Ar1(Ar1Spec),
    Lattice(LatticeKernel),
}

impl ProcessSpec {
    pub fn as_lattice(&self) -> Option<&LatticeKernel> {
        match self {
            ProcessSpec::Lattice(k) => Some(k),
            _ => None,
        }
    }

    pub fn validate(&self, pointer: &str) -> Vec<Diagnostic> {
        match self {
            ProcessSpec::Ou(spec) => spec.validate(pointer),
            ProcessSpec::Ar1(spec) => spec.validate(pointer),
            ProcessSpec::Lattice(_) => Vec::new(),
        }
    }
}

/// Conditional mean and variance of the OU increment `Y(t + dt) - Y(t)`
/// given `Y(t) = y`.
pub fn ou_transition(y: f64, dt: f64, spec: &OuSpec) -> (f64, f64) {
    let mean = y * (-spec.theta * dt).exp_m1();
    let variance =
        spec.sigma * spec.sigma * -(-2.0 * spec.theta * dt).exp_m1() / (2.0 * spec.theta);
    (mean, variance)
}

/// Inverse-cdf sampler over a finite weighted support.
#[derive(Debug, Clone)]
struct DiscreteSampler {
    values: Vec<i64>,
    cdf: Vec<f64>,
}

impl DiscreteSampler {
    fn new(points: impl IntoIterator<Item = (i64, f64)>) -> Self {
        let mut values = Vec::new();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for (v, p) in points {
            if p > 0.0 {
                acc += p;
                values.push(v);
                cdf.push(acc);
            }
        }
        Self { values, cdf }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.values.len() - 1);
        self.values[idx]
    }
}

/// A process compiled against a schedule, ready to draw paths.
#[derive(Debug, Clone)]
pub enum PathSampler {
    Ou {
        init: SymmetricDist,
        decay: Vec<f64>,
        sd: Vec<f64>,
    },
    Ar1 {
        init: SymmetricDist,
        theta: f64,
        noise: SymmetricDist,
        steps: usize,
    },
    Lattice {
        s: f64,
        init: DiscreteSamplerHandle,
        rows: BTreeMap<i64, DiscreteSamplerHandle>,
        steps: usize,
    },
}

/// Opaque row sampler.
#[derive(Debug, Clone)]
pub struct DiscreteSamplerHandle(DiscreteSampler);

impl PathSampler {
    pub fn new(spec: &ProcessSpec, schedule: &RebalanceSchedule) -> Result<Self> {
        let steps = schedule.steps();
        Ok(match spec {
            ProcessSpec::Ou(ou) => {
                let (mut decay, mut sd) = (Vec::new(), Vec::new());
                for dt in schedule.gaps() {
                    let (mean, var) = ou_transition(1.0, dt, ou);
                    decay.push(1.0 + mean);
                    sd.push(var.sqrt());
                }
                PathSampler::Ou {
                    init: ou.init.clone(),
                    decay,
                    sd,
                }
            }
            ProcessSpec::Ar1(ar) => PathSampler::Ar1 {
                init: ar.init.clone(),
                theta: ar.theta,
                noise: ar.noise.clone(),
                steps,
            },
            ProcessSpec::Lattice(kernel) => {
                let needed = kernel.states_needing_rows(steps)?;
                let rows = needed
                    .into_iter()
                    .map(|k| {
                        let row = kernel.row(k)?;
                        Ok((k, DiscreteSamplerHandle(DiscreteSampler::new(row.iter().copied()))))
                    })
                    .collect::<Result<_>>()?;
                PathSampler::Lattice {
                    s: kernel.s,
                    init: DiscreteSamplerHandle(DiscreteSampler::new(kernel.init.iter())),
                    rows,
                    steps,
                }
            }
        })
    }

    /// Writes `Y(t_0), ..., Y(t_K)` into `out`, which must hold `K + 1` values.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            PathSampler::Ou { init, decay, sd } => {
                debug_assert_eq!(out.len(), decay.len() + 1);
                out[0] = init.sample(rng);
                for k in 0..decay.len() {
                    let z: f64 = StandardNormal.sample(rng);
                    out[k + 1] = out[k] * decay[k] + sd[k] * z;
                }
            }
            PathSampler::Ar1 {
                init,
                theta,
                noise,
                steps,
            } => {
                debug_assert_eq!(out.len(), steps + 1);
                out[0] = init.sample(rng);
                for k in 0..*steps {
                    out[k + 1] = theta * out[k] + noise.sample(rng);
                }
            }
            PathSampler::Lattice {
                s,
                init,
                rows,
                steps,
            } => {
                debug_assert_eq!(out.len(), steps + 1);
                let mut state = init.0.sample(rng);
                out[0] = state as f64 * s;
                for slot in out.iter_mut().skip(1) {
                    state = rows[&state].0.sample(rng);
                    *slot = state as f64 * s;
                }
            }
        }
    }
}

/// Draws one path `Y(t_0), ..., Y(t_K)`.
pub fn sample_path<R: Rng + ?Sized>(
    spec: &ProcessSpec,
    schedule: &RebalanceSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sampler = PathSampler::new(spec, schedule)?;
    let mut out = vec![0.0; schedule.len()];
    sampler.sample_into(rng, &mut out);
    Ok(out)
}
