use std::collections::BTreeMap;

use fundsim_core::analytics::{reflect, region_contains, Point2, Reflection, Region};
use fundsim_core::conditions::*;
use fundsim_core::processes::{LatticeKernel, LatticePmf};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

/// Atoms on the quarter lattice with masses that are multiples of 1/4096,
/// so every set sum is exact.
fn dyadic_atoms() -> impl Strategy<Value = Vec<(i64, i64, u32)>> {
    prop::collection::vec((-8i64..=8, -8i64..=8, 1u32..=12), 1..16)
}

fn build_measure(raw: &[(i64, i64, u32)], symmetrize: bool, dominate: bool) -> DiscreteJointMeasure {
    let mut mass: BTreeMap<(i64, i64), u32> = BTreeMap::new();
    for &(i, j, w) in raw {
        *mass.entry((i, j)).or_default() += w;
    }
    if dominate {
        // pile extra mass on the prime image of every R2 atom
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
        let keys: Vec<_> = mass.iter().map(|(&k, &w)| (k, w)).collect();
        for ((i, j), w) in keys {
            *mass.entry((-i, -j)).or_default() += w;
        }
        // equalize pairs
        let snapshot = mass.clone();
        for (&(i, j), w) in mass.iter_mut() {
            *w = (*w).max(snapshot[&(-i, -j)]);
        }
    }
    DiscreteJointMeasure::new(
        mass.into_iter()
            .map(|((i, j), w)| (Point2::new(i as f64 / 4.0, j as f64 / 4.0).unwrap(), w as f64 / 4096.0)),
    )
    .unwrap()
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    y: (f64, f64),
    d: (f64, f64),
}

impl Rect {
    fn contains(&self, p: Point2) -> bool {
        self.y.0 <= p.y && p.y <= self.y.1 && self.d.0 <= p.d_y && p.d_y <= self.d.1
    }
}

fn rect_strategy() -> impl Strategy<Value = Rect> {
    (-2.5..2.5f64, 0.0..3.0f64, -2.5..2.5f64, 0.0..3.0f64).prop_map(|(y, wy, d, wd)| Rect {
        y: (y, y + wy),
        d: (d, d + wd),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    /// Atomwise symmetry is equivalent to `mu(R) = mu(-R)` on every set.
    #[test]
    fn symmetry_check_is_sound(
        raw in dyadic_atoms(), symmetrize in any::<bool>(),
        rects in prop::collection::vec(rect_strategy(), 1000),
    ) {
        let mu = build_measure(&raw, symmetrize, false);
        let report = check_t1_symmetry(&mu, TOL);
        let c = report.condition("t1.i").unwrap();
        if c.passed {
            for r in &rects {
                let direct = mu.mass_where(|p| r.contains(p));
                let mirrored = mu.mass_where(|p| r.contains(-p));
                prop_assert_eq!(direct, mirrored);
            }
        } else {
            let w = &c.witnesses[0];
            let p = w.atom.unwrap();
            prop_assert!(mu.mass_at(p) > mu.mass_at(-p));
        }
    }

    /// Atomwise strength on `R_2` is equivalent to `mu(S) <= mu(S')` for
    /// every `S` inside `R_2`.
    #[test]
    fn strength_check_is_sound(
        raw in dyadic_atoms(), dominate in any::<bool>(),
        rects in prop::collection::vec(rect_strategy(), 1000),
    ) {
        let mu = build_measure(&raw, false, dominate);
        let report = check_t1_strength(&mu, TOL);
        let c = report.condition("t1.ii").unwrap();
        if c.passed {
            for r in &rects {
                let inside = |p: Point2| region_contains(Region::R2, p) && r.contains(p);
                let set = mu.mass_where(inside);
                let image = mu.mass_where(|q| inside(reflect(Reflection::Prime, q)));
                prop_assert!(set <= image, "{} > {}", set, image);
            }
        } else {
            let p = c.witnesses[0].atom.unwrap();
            prop_assert!(region_contains(Region::R2, p));
            prop_assert!(mu.mass_at(p) > mu.mass_at(reflect(Reflection::Prime, p)));
        }
        if dominate {
            prop_assert!(c.passed);
        }
    }

    /// With `r = 1/2` the relaxed strength condition is the plain one.
    #[test]
    fn relaxed_strength_at_one_half_is_plain_strength(raw in dyadic_atoms(), dominate in any::<bool>()) {
        let mu = build_measure(&raw, false, dominate);
        let r: Vec<_> = mu
            .atoms()
            .iter()
            .filter(|(p, _)| region_contains(Region::R2, *p))
            .map(|&(p, _)| (p, 0.5))
            .collect();
        let bounds = T4Bounds { delta1: 0.0, delta2: 0.0, d_log_f: 0.0, kernel_bound: 0.0 };
        let relaxed = check_t4_conditions(&mu, &r, bounds, TOL).unwrap();
        let plain = check_t1(&mu, TOL);
        prop_assert_eq!(relaxed.condition("t4.ii").unwrap().passed, plain.condition("t1.ii").unwrap().passed);
        prop_assert_eq!(relaxed.condition("t4.i").unwrap().passed, plain.condition("t1.i").unwrap().passed);
    }

    /// A chain meeting the conditional-law conditions yields joint laws that
    /// meet the one-step conditions at every step up to the horizon.
    #[test]
    fn chain_conditions_imply_step_conditions(kernel in passing_kernel(), horizon in 1usize..8) {
        let report = check_t2_conditions(&kernel, horizon).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
        for u in kernel.marginals(horizon).unwrap() {
            let mu = DiscreteJointMeasure::from_kernel(&kernel, &u).unwrap();
            let t1 = check_t1(&mu, 1e-10);
            prop_assert!(t1.passed(), "{:?}", t1);
        }
    }

    #[test]
    fn sticking_at_zero_is_flagged(kernel in passing_kernel()) {
        let mut rows: BTreeMap<i64, Vec<(i64, f64)>> = kernel.rows().map(|(k, r)| (k, r.to_vec())).collect();
        rows.insert(0, vec![(0, 1.0)]);
        let stuck = LatticeKernel::new(kernel.s(), rows, kernel.init().clone()).unwrap();
        let report = check_t2_conditions(&stuck, 3).unwrap();
        let c = report.condition("cor3.iv").unwrap();
        prop_assert!(!c.passed);
        prop_assert_eq!(c.witnesses[0].state, Some(0));
    }
}

/// Chains on `-2..=2` built to satisfy the conditional-law conditions: each
/// row with `k >= 1` puts no more mass on a target above `k/2` than on its
/// reflected partner, and negative rows mirror positive ones.
fn passing_kernel() -> impl Strategy<Value = LatticeKernel> {
    (
        0.1..1.5f64,
        prop::collection::vec(0.05..1.0f64, 5),
        prop::collection::vec(0.05..1.0f64, 5),
        prop::collection::vec(0.05..1.0f64, 3),
        0.05..1.0f64,
        0.05..1.0f64,
    )
        .prop_map(|(s, row1, row2, row0, init1, init2)| {
            let states: Vec<i64> = (-2..=2).collect();
            let mut rows = BTreeMap::new();
            for (k1, raw) in [(1i64, &row1), (2, &row2)] {
                let mut w: BTreeMap<i64, f64> = states.iter().copied().zip(raw.iter().copied()).collect();
                for &t in &states {
                    if 2 * t > k1 {
                        // raw weight on t becomes a fraction of its partner's weight
                        let partner = k1 - t;
                        w.insert(t, w[&t] * w[&partner]);
                    }
                }
                let total: f64 = w.values().sum();
                let row: Vec<_> = w.into_iter().map(|(t, p)| (t, p / total)).collect();
                rows.insert(-k1, row.iter().map(|&(t, p)| (-t, p)).collect::<Vec<_>>());
                rows.insert(k1, row);
            }
            let zero = [row0[2], row0[1], row0[0], row0[1], row0[2]];
            let total: f64 = zero.iter().sum();
            rows.insert(0, states.iter().copied().zip(zero.iter().map(|p| p / total)).collect());
            let z = 2.0 * (init1 + init2);
            let init = LatticePmf::new([(-2, init2 / z), (-1, init1 / z), (1, init1 / z), (2, init2 / z)]).unwrap();
            LatticeKernel::new(s, rows, init).unwrap()
        })
}

#[test]
fn horizon_above_cap_is_rejected() {
    let k = LatticeKernel::constant_zero();
    assert!(check_t2_conditions(&k, MAX_HORIZON + 1).is_err());
}

#[test]
fn near_atoms_merge() {
    let p = Point2::new(0.5, 0.25).unwrap();
    let q = Point2::new(0.5 + 1e-12, 0.25).unwrap();
    let mu = DiscreteJointMeasure::new([(p, 0.25), (q, 0.25)]).unwrap();
    assert_eq!(mu.atoms().len(), 1);
    assert_eq!(mu.mass_at(p), 0.5);
    assert!(DiscreteJointMeasure::new([(p, 0.7), (-p, 0.7)]).is_err());
    assert!(DiscreteJointMeasure::new([(p, -0.1)]).is_err());
}
