//! Prices, the `pi^m` portfolio family and value accounting.
//!
//! `pi^m` weights stock `i` by its fundamental `F_i` when `i <= m` and by its
//! price `X_i = F_i exp(Y_i)` otherwise, so `pi^0` is the market portfolio and
//! `pi^n` the fundamental one. Stocks are 1-indexed in that rule and 0-indexed
//! in the slices below.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Tolerance on a weight vector summing to one.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RebalanceSchedule {
    times: Vec<f64>,
}

impl RebalanceSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(domain("a schedule needs at least two times"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(domain("schedule times must be finite"));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(domain(format!(
                "schedule is not strictly increasing at index {}",
                k + 1
            )));
        }
        Ok(Self { times })
    }

    /// Integer times `0, 1, ..., steps`.
    pub fn unit(steps: usize) -> Result<Self> {
        Self::new((0..=steps).map(|k| k as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of rebalancing times, `K + 1`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }
}

impl TryFrom<Vec<f64>> for RebalanceSchedule {
    type Error = String;

    fn try_from(times: Vec<f64>) -> std::result::Result<Self, String> {
        RebalanceSchedule::new(times).map_err(|e| e.to_string())
    }
}

impl From<RebalanceSchedule> for Vec<f64> {
    fn from(s: RebalanceSchedule) -> Self {
        s.times
    }
}

/// `F_i(t_k)`, indexed `[stock][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalPath {
    values: Vec<Vec<f64>>,
}

impl FundamentalPath {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let len = values.first().map_or(0, Vec::len);
        for (i, row) in values.iter().enumerate() {
            if row.len() != len {
                return Err(domain(format!("stock {} has {} fundamentals, expected {len}", i + 1, row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(domain(format!("fundamental {v} of stock {} is not positive", i + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn constant(levels: &[f64], times: usize) -> Result<Self> {
        Self::new(levels.iter().map(|&f| vec![f; times]).collect())
    }

    pub fn stocks(&self) -> usize {
        self.values.len()
    }

    pub fn stock(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn at(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }
}

/// Prices and fundamentals at one rebalancing time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub k: usize,
}

impl MarketState {
    /// `X_i = F_i exp(y_i)`.
    pub fn from_deviations(f: Vec<f64>, y: &[f64], k: usize) -> Result<Self> {
        if f.len() != y.len() {
            return Err(domain("fundamentals and deviations differ in length"));
        }
        let x: Vec<f64> = f.iter().zip(y).map(|(f, y)| f * y.exp()).collect();
        let state = Self { x, f, k };
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<()> {
        if self.x.len() != self.f.len() || self.x.is_empty() {
            return Err(domain("market state needs matching, non-empty price and fundamental vectors"));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.x.iter().all(positive) || !self.f.iter().all(positive) {
            return Err(domain(format!("prices and fundamentals must be positive at step {}", self.k)));
        }
        Ok(())
    }

    pub fn stocks(&self) -> usize {
        self.x.len()
    }
}

/// Index `m` of the portfolio `pi^m`, `0 <= m <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortfolioIndex(usize);

impl PortfolioIndex {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m > n {
            return Err(domain(format!("portfolio index {m} exceeds stock count {n}")));
        }
        Ok(Self(m))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// `V_pi(t_0), ..., V_pi(t_K)` with `V_pi(t_0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePath {
    pub values: Vec<f64>,
}

#[inline]
fn lambda(m: usize, i: usize, x: &[f64], f: &[f64]) -> f64 {
    if i < m {
        f[i]
    } else {
        x[i]
    }
}

pub fn weights(m: PortfolioIndex, state: &MarketState) -> Result<Vec<f64>> {
    state.validate()?;
    if m.get() > state.stocks() {
        return Err(domain(format!("portfolio index {} exceeds stock count {}", m.get(), state.stocks())));
    }
    let lambdas: Vec<f64> = (0..state.stocks())
        .map(|i| lambda(m.get(), i, &state.x, &state.f))
        .collect();
    let total: f64 = lambdas.iter().sum();
    let w: Vec<f64> = lambdas.iter().map(|l| l / total).collect();
    check_interior(&w)?;
    Ok(w)
}

fn check_interior(w: &[f64]) -> Result<()> {
    if let Some(v) = w.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(domain(format!("weight {v} is not in (0, 1)")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(domain(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// `V(t_{k+1}) = V(t_k) * sum_i w_i X_i(t_{k+1}) / X_i(t_k)`.
pub fn step_value(v: f64, w: &[f64], ratios: &[f64]) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        return Err(domain(format!("value {v} must be positive")));
    }
    if w.len() != ratios.len() {
        return Err(domain("weights and ratios differ in length"));
    }
    check_interior(w)?;
    if let Some(r) = ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(domain(format!("price ratio {r} must be positive")));
    }
    Ok(v * w.iter().zip(ratios).map(|(w, r)| w * r).sum::<f64>())
}

/// `Delta_k log V_{pi^hi} / V_{pi^lo}` from slices, with `ratios[i] =
/// X_i(t_{k+1}) / X_i(t_k)`.
///
/// Both portfolios share every lambda outside `lo..hi`, so only that block is
/// summed separately.
pub(crate) fn pair_increment_raw(hi: usize, lo: usize, x: &[f64], f: &[f64], ratios: &[f64]) -> f64 {
    let (mut s_hi, mut g_hi, mut s_lo, mut g_lo) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let l_hi = lambda(hi, i, x, f);
        let l_lo = lambda(lo, i, x, f);
        s_hi += l_hi;
        g_hi += l_hi * ratios[i];
        s_lo += l_lo;
        g_lo += l_lo * ratios[i];
    }
    ((s_lo * g_hi) / (s_hi * g_lo)).ln()
}

fn ratios(state_k: &MarketState, state_k1: &MarketState) -> Result<Vec<f64>> {
    state_k.validate()?;
    state_k1.validate()?;
    if state_k.stocks() != state_k1.stocks() {
        return Err(domain("consecutive states differ in stock count"));
    }
    Ok(state_k.x.iter().zip(&state_k1.x).map(|(a, b)| b / a).collect())
}

/// `Delta_k log V_{pi^m} / V_{pi^{m-1}}` for `m >= 1` in the quotient form
/// `log[(sum lambda^{m-1})(sum lambda^m r) / ((sum lambda^m)(sum lambda^{m-1} r))]`.
pub fn log_ratio_increment(m: PortfolioIndex, state_k: &MarketState, state_k1: &MarketState) -> Result<f64> {
    if m.get() == 0 || m.get() > state_k.stocks() {
        return Err(domain(format!("increment index m = {} must be in 1..={}", m.get(), state_k.stocks())));
    }
    let r = ratios(state_k, state_k1)?;
    Ok(pair_increment_raw(m.get(), m.get() - 1, &state_k.x, &state_k.f, &r))
}

/// `log V_{pi^{m2}}(t_K) / V_{pi^{m1-1}}(t_K)` accumulated over portfolio
/// indices `m1..=m2` and all steps in `states`.
pub fn telescoped_log_ratio(m1: usize, m2: usize, states: &[MarketState]) -> Result<f64> {
    if m1 == 0 || m2 < m1 {
        return Err(domain(format!("need 1 <= m1 <= m2, got m1 = {m1}, m2 = {m2}")));
    }
    let n = states.first().map_or(0, MarketState::stocks);
    let mut total = 0.0;
    for pair in states.windows(2) {
        for m in m1..=m2 {
            total += log_ratio_increment(PortfolioIndex::new(m, n)?, &pair[0], &pair[1])?;
        }
    }
    Ok(total)
}

/// Value path of `pi^m` via the product recursion, starting at 1.
pub fn value_path(m: PortfolioIndex, states: &[MarketState]) -> Result<ValuePath> {
    let mut values = vec![1.0];
    for pair in states.windows(2) {
        let w = weights(m, &pair[0])?;
        let r = ratios(&pair[0], &pair[1])?;
        let v = step_value(*values.last().expect("non-empty"), &w, &r)?;
        values.push(v);
    }
    Ok(ValuePath { values })
}
