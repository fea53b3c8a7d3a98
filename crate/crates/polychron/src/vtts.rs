//! Value of travel time savings under time sharing.
//!
//! In the three-activity scheduling model (work, leisure, travel) the
//! resource value of time is the ratio of the time-constraint multiplier to
//! the income-constraint multiplier. Letting travel time be shared with work
//! or leisure changes that ratio in two ways: the shared durations enlarge
//! the denominator (time becomes less scarce), and paid work done while
//! travelling adds a wage term to the numerator. This module evaluates both
//! the time-sharing and the classical expressions from a bundle of partial
//! derivatives, and decomposes the difference into those two effects.

use crate::error::{Error, Result};

/// Evaluation point for the scheduling model's functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    /// Aggregate consumption.
    pub consumption: f64,
    /// Time spent exclusively on leisure.
    pub leisure: f64,
    /// Time spent exclusively on work.
    pub work: f64,
    /// Time schedule variable.
    pub schedule: f64,
}

/// The scheduling model as user-supplied scalar functions plus a wage and an
/// evaluation point.
///
/// Function arguments follow the model's conventions: utility is
/// `U(consumption, leisure, work, schedule)`, the scheduling constraint is
/// `F(work, schedule)`, and travel cost plus the three schedule-driven
/// durations are functions of the schedule alone.
pub struct SmallModel {
    pub utility: Box<dyn Fn(f64, f64, f64, f64) -> f64>,
    pub schedule_constraint: Box<dyn Fn(f64, f64) -> f64>,
    pub travel_cost: Box<dyn Fn(f64) -> f64>,
    pub travel_time: Box<dyn Fn(f64) -> f64>,
    pub work_while_travelling: Box<dyn Fn(f64) -> f64>,
    pub leisure_while_travelling: Box<dyn Fn(f64) -> f64>,
    pub wage: f64,
    pub point: EvalPoint,
}

/// All partial derivatives the value-of-time formulas consume, produced by
/// one consistent differentiation scheme.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PartialBundle {
    /// dU/dx: marginal utility of consumption (utility per money unit).
    pub u_x: f64,
    /// dU/dl: marginal utility of exclusive leisure.
    pub u_l: f64,
    /// dU/dh: marginal utility of exclusive work.
    pub u_h: f64,
    /// dU/ds: direct schedule effect on utility.
    pub u_s: f64,
    /// dF/ds: schedule effect on the scheduling constraint.
    pub f_s: f64,
    /// dF/dh: work effect on the scheduling constraint.
    pub f_h: f64,
    /// dt/ds: schedule effect on exclusive travel time.
    pub t_s: f64,
    /// dh^t/ds: schedule effect on work shared with travel.
    pub ht_s: f64,
    /// dl^t/ds: schedule effect on leisure shared with travel.
    pub lt_s: f64,
    /// dc/ds: schedule effect on travel cost.
    pub c_s: f64,
}

/// A value-of-time evaluation with its term-by-term decomposition.
///
/// `value * denominator` equals the sum of the four bracket terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct VttsResult {
    /// The resource value of time (money per time unit).
    pub value: f64,
    /// `w * ht_s`: extra money earned from working while travelling.
    pub wage_term: f64,
    /// `f_s (u_l - u_h - w u_x) / (f_h u_x)`: scheduling-constraint term.
    pub schedule_term: f64,
    /// `u_s / u_x`: direct schedule utility in money units.
    pub direct_term: f64,
    /// `-c_s`: travel cost relief.
    pub cost_term: f64,
    /// `ht_s + lt_s + t_s` under time sharing; `t_s` classically.
    pub denominator: f64,
}

/// Side-by-side comparison of the classical and time-sharing values.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EffectsReport {
    pub classical: VttsResult,
    pub timeshare: VttsResult,
    /// `timeshare.value - classical.value`.
    pub difference: f64,
    /// Change from enlarging the denominator alone (wage term excluded):
    /// negative when the bracket is positive and shared time reacts to the
    /// schedule — time gets less scarce.
    pub denominator_effect: f64,
    /// `w * ht_s / denominator`: the earnings-while-travelling effect,
    /// present only when extra work translates into payment.
    pub wage_effect: f64,
}

/// Central-difference step for coordinate `x`: `max(1e-6, 1e-6 |x|)`.
fn step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64, name: &str) -> Result<f64> {
    let h = step(x);
    let (lo, hi) = (f(x - h), f(x + h));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::numeric(format!(
            "{name} is not finite near {x} (stencil values {lo}, {hi})"
        )));
    }
    Ok((hi - lo) / (2.0 * h))
}

/// Differentiates every model function at the evaluation point with central
/// finite differences.
pub fn partials(model: &SmallModel) -> Result<PartialBundle> {
    let EvalPoint {
        consumption: x,
        leisure: l,
        work: h,
        schedule: s,
    } = model.point;
    let u = &model.utility;
    let f = &model.schedule_constraint;
    Ok(PartialBundle {
        u_x: central(|v| u(v, l, h, s), x, "utility w.r.t. consumption")?,
        u_l: central(|v| u(x, v, h, s), l, "utility w.r.t. leisure")?,
        u_h: central(|v| u(x, l, v, s), h, "utility w.r.t. work")?,
        u_s: central(|v| u(x, l, h, v), s, "utility w.r.t. schedule")?,
        f_s: central(|v| f(h, v), s, "scheduling constraint w.r.t. schedule")?,
        f_h: central(|v| f(v, s), h, "scheduling constraint w.r.t. work")?,
        t_s: central(&model.travel_time, s, "travel time")?,
        ht_s: central(&model.work_while_travelling, s, "work while travelling")?,
        lt_s: central(&model.leisure_while_travelling, s, "leisure while travelling")?,
        c_s: central(&model.travel_cost, s, "travel cost")?,
    })
}

fn bracket_terms(p: &PartialBundle, wage: f64) -> Result<(f64, f64, f64)> {
    if p.u_x == 0.0 {
        return Err(Error::domain(
            "marginal utility of consumption (u_x) vanishes; the money metric is undefined",
        ));
    }
    if p.f_h == 0.0 {
        return Err(Error::domain(
            "scheduling-constraint derivative w.r.t. work (f_h) vanishes",
        ));
    }
    let schedule_term = p.f_s * (p.u_l - p.u_h - wage * p.u_x) / (p.f_h * p.u_x);
    let direct_term = p.u_s / p.u_x;
    let cost_term = -p.c_s;
    Ok((schedule_term, direct_term, cost_term))
}

/// The value of time when travel may be shared with work and leisure:
///
/// ```text
/// value = ( w ht_s + f_s (u_l - u_h - w u_x) / (f_h u_x) + u_s / u_x - c_s )
///         / ( ht_s + lt_s + t_s )
/// ```
pub fn vtts_timeshare(p: &PartialBundle, wage: f64) -> Result<VttsResult> {
    let denominator = p.ht_s + p.lt_s + p.t_s;
    if denominator == 0.0 {
        return Err(Error::domain(
            "denominator ht_s + lt_s + t_s vanishes; travel durations do not react to the schedule",
        ));
    }
    let (schedule_term, direct_term, cost_term) = bracket_terms(p, wage)?;
    let wage_term = wage * p.ht_s;
    Ok(VttsResult {
        value: (wage_term + schedule_term + direct_term + cost_term) / denominator,
        wage_term,
        schedule_term,
        direct_term,
        cost_term,
        denominator,
    })
}

/// The classical value of time, with shared durations constrained to zero:
///
/// ```text
/// value = ( f_s (u_l - u_h - w u_x) / (f_h u_x) + u_s / u_x - c_s ) / t_s
/// ```
///
/// The wage term is identically zero here; `ht_s` and `lt_s` in the bundle
/// are ignored.
pub fn vtts_classical(p: &PartialBundle, wage: f64) -> Result<VttsResult> {
    if p.t_s == 0.0 {
        return Err(Error::domain(
            "denominator t_s vanishes; travel time does not react to the schedule",
        ));
    }
    let (schedule_term, direct_term, cost_term) = bracket_terms(p, wage)?;
    Ok(VttsResult {
        value: (schedule_term + direct_term + cost_term) / p.t_s,
        wage_term: 0.0,
        schedule_term,
        direct_term,
        cost_term,
        denominator: p.t_s,
    })
}

/// Evaluates both formulas on the same bundle and splits the difference into
/// the denominator (scarcity) effect and the wage (earning-while-travelling)
/// effect.
pub fn compare_effects(p: &PartialBundle, wage: f64) -> Result<EffectsReport> {
    let classical = vtts_classical(p, wage)?;
    let timeshare = vtts_timeshare(p, wage)?;
    let bracket = classical.schedule_term + classical.direct_term + classical.cost_term;
    let denominator_effect = bracket / timeshare.denominator - bracket / classical.denominator;
    let wage_effect = timeshare.wage_term / timeshare.denominator;
    Ok(EffectsReport {
        classical,
        timeshare,
        difference: timeshare.value - classical.value,
        denominator_effect,
        wage_effect,
    })
}
