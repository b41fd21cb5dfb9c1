//! Hypothesis checkers for finite-support laws and the parametric
//! corollary families.
//!
//! On a finite measure the rectangle conditions reduce to atom-wise ones:
//! `(y, d) -> (-y, -d)` and `(y, d) -> (y, -y - d)` are injections taking
//! atoms to points, so pointwise symmetry gives `mu(R) = mu(-R)` for every
//! rectangle and pointwise `mu{p} <= mu{p'}` on `R_2` gives `mu(R) <= mu(R')`
//! for every rectangle inside `R_2`. Continuous families are handled by their
//! closed-form parameter checks instead.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::analytics::{self, region_contains, reflect, Point2, Reflection, Region};
use crate::error::{domain, Result};
use crate::market::{FundamentalPath, RebalanceSchedule};
use crate::processes::{Ar1Spec, LatticeKernel, LatticePmf, OuSpec, PROB_TOL};

/// Atoms closer than this in both coordinates are the same point.
pub const ATOM_QUANTUM: f64 = 1e-9;

/// Longest horizon for which kernel marginals are propagated.
pub const MAX_HORIZON: usize = 32;

/// Relative slack on the OU spacing bound, absorbing rounding in `t_{k+1} - t_k`.
pub const SPACING_REL_TOL: f64 = 1e-12;

type AtomKey = (i64, i64);

fn atom_key(p: Point2) -> AtomKey {
    (
        (p.y / ATOM_QUANTUM).round() as i64,
        (p.d_y / ATOM_QUANTUM).round() as i64,
    )
}

/// Lookup of points up to [`ATOM_QUANTUM`].
#[derive(Debug, Clone, Default)]
struct AtomIndex {
    keys: HashMap<AtomKey, Vec<usize>>,
}

impl AtomIndex {
    fn insert(&mut self, p: Point2, slot: usize) {
        self.keys.entry(atom_key(p)).or_default().push(slot);
    }

    fn find(&self, p: Point2, points: impl Fn(usize) -> Point2) -> Option<usize> {
        let (ky, kd) = atom_key(p);
        for dy in -1..=1 {
            for dd in -1..=1 {
                if let Some(slots) = self.keys.get(&(ky + dy, kd + dd)) {
                    for &slot in slots {
                        let q = points(slot);
                        if (q.y - p.y).abs() <= ATOM_QUANTUM && (q.d_y - p.d_y).abs() <= ATOM_QUANTUM {
                            return Some(slot);
                        }
                    }
                }
            }
        }
        None
    }
}

/// Finite (sub-)probability measure on `(y, d_y)` space.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteJointMeasure {
    atoms: Vec<(Point2, f64)>,
    #[serde(skip)]
    index: AtomIndex,
}

impl DiscreteJointMeasure {
    pub fn new(atoms: impl IntoIterator<Item = (Point2, f64)>) -> Result<Self> {
        let mut out = Self {
            atoms: Vec::new(),
            index: AtomIndex::default(),
        };
        for (p, w) in atoms {
            if !(p.y.is_finite() && p.d_y.is_finite()) {
                return Err(domain(format!("atom ({}, {}) is not finite", p.y, p.d_y)));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(domain(format!("mass {w} at ({}, {}) is negative", p.y, p.d_y)));
            }
            match out.index.find(p, |i| out.atoms[i].0) {
                Some(slot) => out.atoms[slot].1 += w,
                None => {
                    out.index.insert(p, out.atoms.len());
                    out.atoms.push((p, w));
                }
            }
        }
        let total = out.total();
        if total > 1.0 + PROB_TOL {
            return Err(domain(format!("total mass {total} exceeds 1")));
        }
        Ok(out)
    }

    /// `mu_k` of a kernel started from the marginal `u_k`.
    pub fn from_kernel(kernel: &LatticeKernel, u_k: &LatticePmf) -> Result<Self> {
        let mut atoms = Vec::new();
        for (k1, w) in u_k.iter().filter(|(_, w)| *w > 0.0) {
            for (p, prob) in kernel.kernel_increment_pmf(k1)? {
                atoms.push((p, w * prob));
            }
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[(Point2, f64)] {
        &self.atoms
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    pub fn mass_at(&self, p: Point2) -> f64 {
        self.index
            .find(p, |i| self.atoms[i].0)
            .map_or(0.0, |i| self.atoms[i].1)
    }

    pub fn mass_where(&self, pred: impl Fn(Point2) -> bool) -> f64 {
        self.atoms.iter().filter(|(p, _)| pred(*p)).map(|(_, w)| w).sum()
    }

    /// Largest `|d_y|` carrying positive mass.
    pub fn max_abs_increment(&self) -> f64 {
        self.atoms
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(p, _)| p.d_y.abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom: Option<Point2>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub margin: f64,
    pub note: String,
}

impl Witness {
    pub fn note(note: impl Into<String>, margin: f64) -> Self {
        Self {
            atom: None,
            state: None,
            index: None,
            margin,
            note: note.into(),
        }
    }

    pub fn at_atom(p: Point2, margin: f64, note: impl Into<String>) -> Self {
        Self {
            atom: Some(p),
            ..Self::note(note, margin)
        }
    }

    pub fn at_state(k: i64, margin: f64, note: impl Into<String>) -> Self {
        Self {
            state: Some(k),
            ..Self::note(note, margin)
        }
    }

    pub fn at_index(i: usize, margin: f64, note: impl Into<String>) -> Self {
        Self {
            index: Some(i),
            ..Self::note(note, margin)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    pub passed: bool,
    pub witnesses: Vec<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub theorem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
    pub conditions: Vec<ConditionResult>,
    /// Smallest slack per condition label; negative beyond tolerance fails.
    pub margins: BTreeMap<String, f64>,
}

impl ConditionReport {
    pub fn new(theorem: impl Into<String>) -> Self {
        Self {
            theorem: theorem.into(),
            scope: None,
            conditions: Vec::new(),
            margins: BTreeMap::new(),
        }
    }

    pub fn with_scope(mut self, scope: impl Into<String>) -> Self {
        self.scope = Some(scope.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, label: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.label == label)
    }

    /// Adds a condition from a finished [`Check`].
    pub fn push(&mut self, check: Check) {
        if let Some(m) = check.margin {
            self.margins.insert(check.label.clone(), m);
        }
        self.conditions.push(ConditionResult {
            passed: check.witnesses.is_empty(),
            label: check.label,
            witnesses: check.witnesses,
        });
    }

    pub fn merge(&mut self, other: ConditionReport) {
        self.margins.extend(other.margins);
        self.conditions.extend(other.conditions);
    }
}

/// Accumulates observations for one labelled condition.
#[derive(Debug, Clone)]
pub struct Check {
    label: String,
    witnesses: Vec<Witness>,
    margin: Option<f64>,
}

impl Check {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            witnesses: Vec::new(),
            margin: None,
        }
    }

    /// Records a slack; `ok` decides pass/fail, `witness` is built on failure.
    pub fn observe(&mut self, slack: f64, ok: bool, witness: impl FnOnce() -> Witness) {
        self.margin = Some(self.margin.map_or(slack, |m| m.min(slack)));
        if !ok {
            self.witnesses.push(witness());
        }
    }

    pub fn fail(&mut self, witness: Witness) {
        self.margin = Some(self.margin.map_or(witness.margin, |m| m.min(witness.margin)));
        self.witnesses.push(witness);
    }
}

fn symmetry_check(label: &str, mu: &DiscreteJointMeasure, tol: f64) -> Check {
    let mut check = Check::new(label);
    for &(p, w) in mu.atoms() {
        let mirror = mu.mass_at(-p);
        let diff = w - mirror;
        // only the heavier side of an unequal pair is reported
        check.observe(-diff.abs(), diff <= tol, || {
            Witness::at_atom(p, -diff, format!("mass {w} vs {mirror} at the negated atom"))
        });
    }
    check
}

fn strength_check(label: &str, mu: &DiscreteJointMeasure, tol: f64) -> Check {
    let mut check = Check::new(label);
    for &(p, w) in mu.atoms() {
        if !region_contains(Region::R2, p) {
            continue;
        }
        let mirror = mu.mass_at(reflect(Reflection::Prime, p));
        let slack = mirror - w;
        check.observe(slack, slack >= -tol, || {
            Witness::at_atom(p, slack, format!("mass {w} exceeds reflected mass {mirror}"))
        });
    }
    check
}

/// Symmetry `mu(R) = mu(-R)`, checked atom by atom.
pub fn check_t1_symmetry(mu: &DiscreteJointMeasure, tol: f64) -> ConditionReport {
    let mut report = ConditionReport::new("t1");
    report.push(symmetry_check("t1.i", mu, tol));
    report
}

/// Reversion strength `mu(R) <= mu(R')` on `R_2`, checked atom by atom.
pub fn check_t1_strength(mu: &DiscreteJointMeasure, tol: f64) -> ConditionReport {
    let mut report = ConditionReport::new("t1");
    report.push(strength_check("t1.ii", mu, tol));
    report
}

pub fn check_t1(mu: &DiscreteJointMeasure, tol: f64) -> ConditionReport {
    let mut report = check_t1_symmetry(mu, tol);
    report.merge(check_t1_strength(mu, tol));
    report
}

/// `mu(R_1)`.
pub fn check_t1_mass_r1(mu: &DiscreteJointMeasure) -> f64 {
    mu.mass_where(|p| region_contains(Region::R1, p))
}

fn init_check(label: &str, pmf: &LatticePmf) -> Check {
    let mut check = Check::new(label);
    let (diff, state) = pmf.asymmetry();
    check.observe(-diff, diff <= PROB_TOL, || {
        Witness::at_state(state.unwrap_or(0), -diff, "initial pmf is not symmetric")
    });
    if pmf.is_trivial() {
        check.fail(Witness::at_state(0, 0.0, "initial pmf is degenerate at 0"));
    }
    check
}

/// Conditional-law conditions for a lattice chain, in their Markov-chain
/// form: row symmetry, row reversion strength, symmetric non-trivial start,
/// `P(k, 0) < 1` and positive mass on `d >= -k/2` for `k >= 1`.
pub fn check_t2_conditions(kernel: &LatticeKernel, horizon: usize) -> Result<ConditionReport> {
    if horizon > MAX_HORIZON {
        return Err(domain(format!("horizon {horizon} exceeds the cap {MAX_HORIZON}")));
    }
    // errors on states reachable before the horizon without a row
    kernel.marginals(horizon)?;

    let tol = PROB_TOL;
    let mut report = ConditionReport::new("t2");

    let mut sym = Check::new("cor3.i");
    for (k1, row) in kernel.rows() {
        for &(k2, p) in row {
            match kernel.prob(-k1, -k2) {
                None => sym.fail(Witness::at_state(k1, -p, format!("row {} is undefined", -k1))),
                Some(q) => {
                    let diff = (p - q).abs();
                    sym.observe(-diff, diff <= tol, || {
                        Witness::at_state(k1, -diff, format!("P({k1},{k2}) = {p} but P({},{}) = {q}", -k1, -k2))
                    });
                }
            }
        }
    }
    report.push(sym);

    let mut strength = Check::new("cor3.ii");
    for (k1, row) in kernel.rows().filter(|(k1, _)| *k1 >= 1) {
        for &(target, p) in row {
            let jump = target - k1;
            if 2 * jump > -k1 {
                let q = kernel.prob(k1, -jump).unwrap_or(0.0);
                let slack = q - p;
                strength.observe(slack, slack >= -tol, || {
                    Witness::at_state(k1, slack, format!("P({k1},{target}) = {p} exceeds P({k1},{}) = {q}", -jump))
                });
            }
        }
    }
    report.push(strength);

    report.push(init_check("cor3.iii", kernel.init()));

    let mut stay = Check::new("cor3.iv");
    for (k1, _) in kernel.rows() {
        let p0 = kernel.prob(k1, 0).unwrap_or(0.0);
        let slack = 1.0 - p0;
        stay.observe(slack, slack > tol, || {
            Witness::at_state(k1, slack, format!("P({k1}, 0) = {p0} is not below 1"))
        });
    }
    report.push(stay);

    let mut moves = Check::new("cor3.v");
    for (k1, row) in kernel.rows().filter(|(k1, _)| *k1 >= 1) {
        let mass: f64 = row
            .iter()
            .filter(|(target, _)| 2 * (target - k1) >= -k1)
            .map(|(_, p)| p)
            .sum();
        moves.observe(mass, mass > tol, || {
            Witness::at_state(k1, mass, "no mass on moves with d >= -k/2")
        });
    }
    report.push(moves);

    Ok(report)
}

/// Every gap must be at least `ln 2 / min theta`.
pub fn check_ou_spacing(specs: &[OuSpec], schedule: &RebalanceSchedule) -> ConditionReport {
    let mut report = ConditionReport::new("cor1");
    let mut check = Check::new("cor1.spacing");
    if let Some(theta) = specs.iter().map(|s| s.theta).reduce(f64::min) {
        let bound = LN_2 / theta;
        for (k, gap) in schedule.gaps().enumerate() {
            let slack = gap - bound;
            check.observe(slack, slack >= -SPACING_REL_TOL * bound, || {
                Witness::at_index(k, slack, format!("gap {gap} below ln2/theta = {bound}"))
            });
        }
    }
    report.push(check);
    report
}

/// Spacing plus a symmetric, non-trivial start for every OU process.
pub fn check_cor1(specs: &[OuSpec], schedule: &RebalanceSchedule) -> ConditionReport {
    let mut report = check_ou_spacing(specs, schedule);
    let mut init = Check::new("cor1.init");
    for (i, spec) in specs.iter().enumerate() {
        let ok = spec.init.is_symmetric() && !spec.init.is_trivial();
        init.observe(if ok { 0.0 } else { -1.0 }, ok, || {
            Witness::at_index(i, -1.0, "initial law must be symmetric and non-degenerate")
        });
    }
    report.push(init);
    report
}

/// AR(1) conditions: `theta <= 1/2`, symmetric non-trivial noise with
/// `P(Z > a) > 0` for all `a`, symmetric non-trivial start.
pub fn check_cor2(specs: &[Ar1Spec]) -> ConditionReport {
    let mut report = ConditionReport::new("cor2");
    let mut theta = Check::new("cor2.theta");
    let mut noise = Check::new("cor2.noise_symmetric");
    let mut tail = Check::new("cor2.noise_unbounded");
    let mut init = Check::new("cor2.init");
    for (i, spec) in specs.iter().enumerate() {
        let slack = 0.5 - spec.theta;
        theta.observe(slack, slack >= 0.0, || {
            Witness::at_index(i, slack, format!("theta = {} exceeds 1/2", spec.theta))
        });
        let ok = spec.noise.is_symmetric() && !spec.noise.is_trivial();
        noise.observe(if ok { 0.0 } else { -1.0 }, ok, || {
            Witness::at_index(i, -1.0, "noise must be symmetric and non-degenerate")
        });
        let ok = spec.noise.unbounded_above();
        tail.observe(if ok { 0.0 } else { -1.0 }, ok, || {
            Witness::at_index(i, -1.0, "noise support is bounded above")
        });
        let ok = spec.init.is_symmetric() && !spec.init.is_trivial();
        init.observe(if ok { 0.0 } else { -1.0 }, ok, || {
            Witness::at_index(i, -1.0, "initial law must be symmetric and non-degenerate")
        });
    }
    for c in [theta, noise, tail, init] {
        report.push(c);
    }
    report
}

/// Bounds entering the relaxed reversion-strength conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T4Bounds {
    pub delta1: f64,
    pub delta2: f64,
    /// Observed `|Delta_k log F_m|`.
    pub d_log_f: f64,
    /// Largest `|Delta_k Y_m|` the kernel can produce.
    pub kernel_bound: f64,
}

fn lookup_r(r_values: &[(Point2, f64)], index: &AtomIndex, p: Point2) -> Result<f64> {
    let slot = index
        .find(p, |i| r_values[i].0)
        .ok_or_else(|| domain(format!("no r value at atom ({}, {})", p.y, p.d_y)))?;
    let r = r_values[slot].1;
    if !(r.is_finite() && (0.0..1.0).contains(&r)) {
        return Err(domain(format!("r = {r} at ({}, {}) is outside [0, 1)", p.y, p.d_y)));
    }
    Ok(r)
}

/// Relaxed-strength conditions with a per-atom weight `r(p)` on `R_2`.
pub fn check_t4_conditions(
    mu: &DiscreteJointMeasure,
    r_values: &[(Point2, f64)],
    bounds: T4Bounds,
    tol: f64,
) -> Result<ConditionReport> {
    let mut index = AtomIndex::default();
    for (i, (p, _)) in r_values.iter().enumerate() {
        index.insert(*p, i);
    }

    let mut report = ConditionReport::new("t4");
    let mut threshold = Check::new("t4.threshold");
    let mut strength = Check::new("t4.ii");
    for &(p, w) in mu.atoms() {
        if !region_contains(Region::R2, p) {
            continue;
        }
        let r = lookup_r(r_values, &index, p)?;
        let bound = analytics::t4_threshold(p, bounds.delta1, bounds.delta2)?;
        let slack = r - bound;
        threshold.observe(slack, slack > 0.0, || {
            Witness::at_atom(p, slack, format!("r = {r} does not exceed threshold {bound}"))
        });
        let mirror = mu.mass_at(reflect(Reflection::Prime, p));
        let need = w * r / (1.0 - r);
        let slack = mirror - need;
        strength.observe(slack, slack >= -tol, || {
            Witness::at_atom(p, slack, format!("reflected mass {mirror} below {need}"))
        });
    }
    report.push(threshold);
    report.push(symmetry_check("t4.i", mu, tol));
    report.push(strength);

    let mut fundamentals = Check::new("t4.iii");
    let slack = bounds.delta1 - bounds.d_log_f.abs();
    fundamentals.observe(slack, slack >= 0.0, || {
        Witness::note(format!("|dlog F| = {} exceeds delta1 = {}", bounds.d_log_f.abs(), bounds.delta1), slack)
    });
    report.push(fundamentals);

    let mut moves = Check::new("t4.iv");
    let slack = bounds.delta2 - bounds.kernel_bound;
    moves.observe(slack, slack >= 0.0, || {
        Witness::note(format!("increment bound {} exceeds delta2 = {}", bounds.kernel_bound, bounds.delta2), slack)
    });
    report.push(moves);

    Ok(report)
}

/// Minimal admissible `r(p) = max(threshold(p) + margin, 0)` on every
/// `R_2` atom of `mu`.
pub fn admissible_r_values(
    mu: &DiscreteJointMeasure,
    delta1: f64,
    delta2: f64,
    margin: f64,
) -> Result<Vec<(Point2, f64)>> {
    mu.atoms()
        .iter()
        .filter(|(p, _)| region_contains(Region::R2, *p))
        .map(|&(p, _)| Ok((p, analytics::min_admissible_r(p, delta1, delta2, margin)?)))
        .collect()
}

/// Structure of the two-stock underperformance construction: one step, stock
/// 1 at `+-s` with mass 1/2 each moving to `2s` or `0` (mirrored for `-s`),
/// stock 2 pinned at its fundamental `A`, `F_1 = 1`, and the inequality
/// `lhs(s, A) < M(s, 2s)`.
pub fn check_counterexample(
    moving: &LatticeKernel,
    pinned: &LatticeKernel,
    fundamentals: &FundamentalPath,
    schedule: &RebalanceSchedule,
) -> Result<ConditionReport> {
    let mut report = ConditionReport::new("t5");
    let s = moving.s();

    let mut setup = Check::new("t5.setup");
    if fundamentals.stocks() != 2 {
        setup.fail(Witness::note("needs exactly two stocks", -1.0));
    }
    if schedule.steps() != 1 {
        setup.fail(Witness::note("needs exactly one rebalancing step", -1.0));
    }
    if fundamentals.stocks() >= 1 && fundamentals.stock(0).iter().any(|&f| f != 1.0) {
        setup.fail(Witness::at_index(0, -1.0, "F_1 must be 1 at both times"));
    }
    let a = if fundamentals.stocks() == 2 {
        let f2 = fundamentals.stock(1);
        if f2.windows(2).any(|w| w[0] != w[1]) {
            setup.fail(Witness::at_index(1, -1.0, "F_2 must be constant"));
        }
        f2[0]
    } else {
        f64::NAN
    };
    let pinned_ok = pinned.init().support().all(|k| k == 0) && pinned.prob(0, 0) == Some(1.0);
    if !pinned_ok {
        setup.fail(Witness::at_index(1, -1.0, "Y_2 must be 0 at both times"));
    }
    if setup.witnesses.is_empty() {
        setup.observe(0.0, true, || unreachable!());
    }
    report.push(setup);

    let mut init = Check::new("t5.init");
    let (up, down) = (moving.init().mass(1), moving.init().mass(-1));
    let slack = -((up - 0.5).abs().max((down - 0.5).abs()));
    init.observe(slack, slack >= -PROB_TOL, || {
        Witness::note(format!("P(Y_1(0) = s) = {up}, P(Y_1(0) = -s) = {down}"), slack)
    });
    report.push(init);

    let m_up = moving.prob(1, 2).unwrap_or(0.0);
    let m_down = moving.prob(1, 0).unwrap_or(0.0);

    let mut sym = Check::new("t5.i");
    for (from, to) in [(1, 2), (1, 0)] {
        let p = moving.prob(from, to).unwrap_or(0.0);
        let q = moving.prob(-from, -to).unwrap_or(f64::NAN);
        let diff = (p - q).abs();
        sym.observe(-diff, diff <= PROB_TOL, || {
            Witness::at_state(from, -diff, format!("M({from},{to}) = {p} vs mirrored {q}"))
        });
    }
    report.push(sym);

    let mut weak = Check::new("t5.ii");
    let slack = m_down - m_up;
    weak.observe(slack, slack > 0.0, || {
        Witness::at_state(1, slack, format!("M(s,2s) = {m_up} is not below M(s,0) = {m_down}"))
    });
    report.push(weak);

    let mut total = Check::new("t5.iii");
    let slack = -(m_up + m_down - 1.0).abs();
    total.observe(slack, slack >= -PROB_TOL, || {
        Witness::at_state(1, slack, "M(s,2s) + M(s,0) must be 1")
    });
    report.push(total);

    let mut ineq = Check::new("t5.inequality");
    if a.is_finite() && a > 0.0 {
        let lhs = analytics::counterexample_lhs(s, a)?;
        let slack = m_up - lhs;
        ineq.observe(slack, slack > 0.0, || {
            Witness::note(format!("lhs {lhs} is not below M(s,2s) = {m_up} at A = {a}"), slack)
        });
    } else {
        ineq.fail(Witness::note("A is undefined", -1.0));
    }
    report.push(ineq);

    Ok(report)
}
