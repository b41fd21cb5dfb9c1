//! Closed-form building blocks for the per-stock log-ratio increment.
//!
//! Everything here is a pure function of its arguments. The increment
//! `f(y, d_y)` is the one-step change in `log V_{pi^m} / V_{pi^{m-1}}` seen
//! from stock `m`, where `y = Y_m(t_k)` and `d_y = Y_m(t_{k+1}) - Y_m(t_k)`;
//! `h` is its even part `f(p) + f(-p)` and `g` the part of `h` that carries
//! the reversion direction.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Inputs with `|y| + |d_y|` above this overflow `exp` in double precision.
pub const MAX_EXPONENT: f64 = 700.0;

/// Minimum slack demanded of the counterexample inequality.
pub const COUNTEREXAMPLE_MARGIN: f64 = 1e-9;

/// Largest power of two tried for the counterexample level `A`.
pub const COUNTEREXAMPLE_MAX_POWER: i32 = 60;

/// A (level, increment) pair `(Y_m(t_k), Delta_k Y_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub y: f64,
    pub d_y: f64,
}

impl Point2 {
    pub fn new(y: f64, d_y: f64) -> Result<Self> {
        if !(y.is_finite() && d_y.is_finite()) {
            return Err(domain(format!("point ({y}, {d_y}) is not finite")));
        }
        Ok(Self { y, d_y })
    }

    fn guarded(self) -> Result<Self> {
        if !(self.y.is_finite() && self.d_y.is_finite()) {
            return Err(domain(format!("point ({}, {}) is not finite", self.y, self.d_y)));
        }
        if self.y.abs() + self.d_y.abs() > MAX_EXPONENT {
            return Err(domain(format!(
                "|y| + |d_y| = {} exceeds the exponent bound {MAX_EXPONENT}",
                self.y.abs() + self.d_y.abs()
            )));
        }
        Ok(self)
    }
}

impl std::ops::Neg for Point2 {
    type Output = Point2;

    fn neg(self) -> Point2 {
        Point2 {
            y: -self.y,
            d_y: -self.d_y,
        }
    }
}

/// The rest of the market as seen from stock `m` over one rebalancing step.
///
/// `a_k` is `A_k = sum_{i<m} F_i(t_k) + sum_{i>m} X_i(t_k)` and `b_k` is the
/// same aggregate grown to `t_{k+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StockContext {
    pub a_k: f64,
    pub b_k: f64,
    pub f_now: f64,
    pub f_next: f64,
}

impl StockContext {
    pub fn new(a_k: f64, b_k: f64, f_now: f64, f_next: f64) -> Result<Self> {
        let ctx = Self {
            a_k,
            b_k,
            f_now,
            f_next,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a_k", self.a_k),
            ("b_k", self.b_k),
            ("f_now", self.f_now),
            ("f_next", self.f_next),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(domain(format!("{name} = {v} must be finite and positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// `y > 0, d_y >= -y/2`
    R1,
    /// `y > 0, d_y > -y/2`
    R2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reflection {
    /// `(y, d_y) -> (-y, -d_y)`
    Negate,
    /// `(y, d_y) -> (y, -y - d_y)`
    Prime,
}

pub fn phi(x: f64, y: f64) -> Result<f64> {
    if !(x.is_finite() && y.is_finite() && x > 0.0 && y > 0.0) {
        return Err(domain(format!("phi({x}, {y}) needs positive finite arguments")));
    }
    Ok(x / y + y / x)
}

/// Direction term of `h`: negative when the move reverts too little.
pub fn g_fn(p: Point2, b_k: f64, f_next: f64) -> Result<f64> {
    let p = p.guarded()?;
    let x = phi(b_k, f_next)?;
    let num = x + 2.0 * p.d_y.cosh();
    let den = x + 2.0 * (p.y + p.d_y).cosh();
    Ok((num / den).ln())
}

/// One-step log-ratio increment `Delta_k log V_{pi^m} / V_{pi^{m-1}}` as a
/// function of stock `m`'s level and move.
pub fn f_increment(p: Point2, ctx: &StockContext) -> Result<f64> {
    let p = p.guarded()?;
    ctx.validate()?;
    let StockContext {
        a_k,
        b_k,
        f_now,
        f_next,
    } = *ctx;
    let level = ((a_k + f_now * p.y.exp()) / (a_k + f_now)).ln();
    let step =
        ((b_k + f_next * p.d_y.exp()) / (b_k + f_next * (p.y + p.d_y).exp())).ln();
    Ok(level + step)
}

/// `h(p) = f(p) + f(-p)`, evaluated through its `phi` decomposition.
pub fn h_fn(p: Point2, ctx: &StockContext) -> Result<f64> {
    let p = p.guarded()?;
    ctx.validate()?;
    let x = phi(ctx.a_k, ctx.f_now)?;
    let level = ((x + 2.0 * p.y.cosh()) / (x + 2.0)).ln();
    Ok(level + g_fn(p, ctx.b_k, ctx.f_next)?)
}

pub fn region_contains(region: Region, p: Point2) -> bool {
    if !(p.y > 0.0) {
        return false;
    }
    let boundary = -0.5 * p.y;
    match region {
        Region::R1 => p.d_y >= boundary,
        Region::R2 => p.d_y > boundary,
    }
}

pub fn reflect(kind: Reflection, p: Point2) -> Point2 {
    match kind {
        Reflection::Negate => -p,
        Reflection::Prime => Point2 {
            y: p.y,
            d_y: -p.y - p.d_y,
        },
    }
}

/// Lower bound that the relaxed reversion weight `r(y, d_y)` must exceed.
///
/// The quoted ratio `(e^y + e^-y - 2) / (e^(y+d) + e^-(y+d) - e^d - e^-d)`
/// is evaluated as `sinh(y/2) / sinh(y/2 + d)`, which is the same quantity
/// without the cancellation in the denominator.
pub fn t4_threshold(p: Point2, delta1: f64, delta2: f64) -> Result<f64> {
    let p = p.guarded()?;
    if !(p.y > 0.0 && p.d_y > -0.5 * p.y) {
        return Err(domain(format!(
            "t4 threshold needs y > 0 and d_y > -y/2, got ({}, {})",
            p.y, p.d_y
        )));
    }
    if !(delta1 >= 0.0 && delta2 >= 0.0 && delta1.is_finite() && delta2.is_finite()) {
        return Err(domain(format!(
            "deltas must be finite and non-negative, got ({delta1}, {delta2})"
        )));
    }
    let half = 0.5 * p.y;
    let ratio = half.sinh() / (half + p.d_y).sinh();
    Ok(0.5 * (1.0 - (-2.0 * delta1 - delta2).exp() * ratio))
}

/// Smallest admissible relaxed weight `r` at `p`, lifted by `margin`.
pub fn min_admissible_r(p: Point2, delta1: f64, delta2: f64, margin: f64) -> Result<f64> {
    let r = (t4_threshold(p, delta1, delta2)? + margin).max(0.0);
    if r >= 1.0 {
        return Err(domain(format!("admissible r = {r} is not below 1")));
    }
    Ok(r)
}

/// Large-`A` limit of the counterexample ratio.
pub fn counterexample_limit_r(s: f64) -> Result<f64> {
    if !(s.is_finite() && s > 0.0) {
        return Err(domain(format!("lattice step s = {s} must be positive")));
    }
    Ok(2.0 / ((s.exp() + 1.0) * (1.0 + (-s).exp())))
}

/// Left side of the counterexample inequality at level `a`.
///
/// Ratio of `2 log[(phi(1,A) + e^s + e^-s) / (phi(1,A) + 2)]` to
/// `log[(phi(1,A) + e^2s + e^-2s) / (phi(1,A) + 2)]`. Both logs are positive;
/// the counterexample needs this ratio to sit below `M(s, 2s)`.
pub fn counterexample_lhs(s: f64, a: f64) -> Result<f64> {
    if !(s.is_finite() && s > 0.0) {
        return Err(domain(format!("lattice step s = {s} must be positive")));
    }
    let x = phi(1.0, a)?;
    // e^u + e^-u - 2 = 4 sinh^2(u/2)
    let excess = |u: f64| 4.0 * (0.5 * u).sinh().powi(2);
    let num = 2.0 * (excess(s) / (x + 2.0)).ln_1p();
    let den = (excess(2.0 * s) / (x + 2.0)).ln_1p();
    Ok(num / den)
}

/// Parameters of the two-stock underperformance construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSpec {
    pub s: f64,
    /// `M(s, 2s)`
    pub m_up: f64,
    /// `M(s, 0)`
    pub m_down: f64,
    /// Constant fundamental of the second stock.
    pub a: f64,
    pub r_limit: f64,
}

impl CounterexampleSpec {
    pub fn lhs(&self) -> Result<f64> {
        counterexample_lhs(self.s, self.a)
    }

    /// `M(s, 2s) - lhs`; positive when the inequality holds.
    pub fn margin(&self) -> Result<f64> {
        Ok(self.m_up - self.lhs()?)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let r = counterexample_limit_r(self.s)?;
        let fail = |msg: String| Err(Error::Domain(msg));
        if (self.m_up + self.m_down - 1.0).abs() > 1e-12 {
            return fail(format!("m_up + m_down = {}", self.m_up + self.m_down));
        }
        if !(0.0 <= self.m_up && self.m_up < self.m_down) {
            return fail(format!("need 0 <= m_up < m_down, got {} / {}", self.m_up, self.m_down));
        }
        if (self.r_limit - r).abs() > 1e-15 {
            return fail(format!("r_limit {} != closed form {r}", self.r_limit));
        }
        if (self.m_up - 0.5 * (r + 0.5)).abs() > 1e-15 {
            return fail(format!("m_up {} != (r + 1/2)/2", self.m_up));
        }
        let margin = self.margin()?;
        if margin < COUNTEREXAMPLE_MARGIN {
            return fail(format!("inequality margin {margin:e} below {COUNTEREXAMPLE_MARGIN:e}"));
        }
        Ok(())
    }
}

/// Builds the underperformance construction for lattice step `s`: pins
/// `M(s, 2s) = (r + 1/2) / 2` and takes the smallest `A = 2^j` for which the
/// inequality holds with margin at least [`COUNTEREXAMPLE_MARGIN`].
pub fn build_counterexample(s: f64) -> Result<CounterexampleSpec> {
    let r_limit = counterexample_limit_r(s)?;
    let m_up = 0.5 * (r_limit + 0.5);
    let mut closest = f64::NEG_INFINITY;
    for j in 0..=COUNTEREXAMPLE_MAX_POWER {
        let a = 2f64.powi(j);
        let margin = m_up - counterexample_lhs(s, a)?;
        if margin >= COUNTEREXAMPLE_MARGIN {
            return Ok(CounterexampleSpec {
                s,
                m_up,
                m_down: 1.0 - m_up,
                a,
                r_limit,
            });
        }
        closest = closest.max(margin);
    }
    Err(Error::Construction {
        s,
        closest_margin: closest,
    })
}
