#![allow(dead_code)]

use std::collections::BTreeMap;

use fundsim_core::market::{FundamentalPath, RebalanceSchedule};
use fundsim_core::processes::{LatticeKernel, LatticePmf, ProcessSpec};
use fundsim_core::{Engine, McSettings, Scenario};
use proptest::prelude::*;

pub const STATES: std::ops::RangeInclusive<i64> = -2..=2;

fn normalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Kernel on `-2..=2` with every row defined; weights may hit zero.
pub fn kernel_strategy() -> impl Strategy<Value = LatticeKernel> {
    (
        0.1..1.0f64,
        prop::collection::vec(prop::collection::vec(0.0..1.0f64, 5), 5),
        prop::collection::vec(0.0..1.0f64, 5),
    )
        .prop_filter("rows and init need positive mass", |(_, rows, init)| {
            rows.iter().all(|r| r.iter().sum::<f64>() > 0.05) && init.iter().sum::<f64>() > 0.05
        })
        .prop_map(|(s, rows, init)| {
            let states: Vec<i64> = STATES.collect();
            let rows: BTreeMap<i64, Vec<(i64, f64)>> = states
                .iter()
                .zip(&rows)
                .map(|(&k, raw)| (k, states.iter().copied().zip(normalize(raw)).collect()))
                .collect();
            let init = LatticePmf::new(states.iter().copied().zip(normalize(&init))).unwrap();
            LatticeKernel::new(s, rows, init).unwrap()
        })
}

pub fn lattice_scenario(kernels: Vec<LatticeKernel>, fundamentals: Vec<Vec<f64>>, m1: usize, m2: usize) -> Scenario {
    let steps = fundamentals[0].len() - 1;
    Scenario {
        name: None,
        schedule: RebalanceSchedule::unit(steps).unwrap(),
        fundamentals: FundamentalPath::new(fundamentals).unwrap(),
        processes: kernels.into_iter().map(ProcessSpec::Lattice).collect(),
        m1,
        m2,
        engine: Engine::Exact,
        mc: McSettings::default(),
        checks: Vec::new(),
        t4: None,
    }
}

/// Random enumerable scenario: 2-3 stocks, 1-3 steps.
pub fn scenario_strategy() -> impl Strategy<Value = Scenario> {
    (2usize..=3, 1usize..=3)
        .prop_flat_map(|(n, steps)| {
            (
                prop::collection::vec(kernel_strategy(), n),
                prop::collection::vec(prop::collection::vec(0.2..5.0f64, steps + 1), n),
                1..=n,
                1..=n,
            )
        })
        .prop_map(|(kernels, fundamentals, a, b)| {
            let (m1, m2) = (a.min(b), a.max(b));
            lattice_scenario(kernels, fundamentals, m1, m2)
        })
}

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

/// Scenarios small enough to enumerate whole trajectories.
pub fn small_scenario_strategy() -> impl Strategy<Value = Scenario> {
    prop_oneof![Just((2usize, 1usize)), Just((2, 2)), Just((3, 1))]
        .prop_flat_map(|(n, steps)| {
            (
                prop::collection::vec(kernel_strategy(), n),
                prop::collection::vec(prop::collection::vec(0.2..5.0f64, steps + 1), n),
                1..=n,
                1..=n,
            )
        })
        .prop_map(|(kernels, fundamentals, a, b)| lattice_scenario(kernels, fundamentals, a.min(b), a.max(b)))
}
