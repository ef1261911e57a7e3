//! Closed-form approximations of the value difference `D` and the actions
//! they suggest.
//!
//! `H` splits `D` into an upstream part (extra waiting caused by the chosen
//! NP returning to triage earlier or later) and a downstream part (the cost
//! of the service itself). For `l >= cg` it blends a slow-triage estimate
//! `H0` and a fast-triage estimate `Hinf` with the weight `w`, the
//! probability that a triage completion is the next event. `H_Lin` replaces
//! the ceiling terms of `H0` by `i / cp`, which makes it affine in `i` and
//! yields an explicit threshold rule.
//!
//! [`deterministic_area_oracle`] replays the two deterministic systems that
//! the upstream term is derived from and integrates their upstream
//! populations directly; it exists to check the ceiling formulas.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{check_decision, Action, ModelParams, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConstants {
    pub k: u32,
    pub l: u32,
    pub j_implied: u32,
    pub b: f64,
    pub c: f64,
    pub b_l: Option<f64>,
    pub c_l: Option<f64>,
    pub ell_prime: Option<u32>,
    pub y_l: Option<f64>,
    pub c_prime: f64,
    pub b_prime: f64,
    pub w: f64,
}

impl HeuristicConstants {
    fn queued(&self) -> Option<(f64, f64, f64)> {
        Some((self.b_l?, self.c_l?, self.y_l?))
    }

    /// `l >= cg` with `c_l <= 0` and `b_l <= 0`: collaborating is never
    /// worth it and both heuristics return the sentinel `-1`.
    pub fn degenerate(&self) -> bool {
        matches!(self.queued(), Some((b_l, c_l, _)) if c_l <= 0.0 && b_l <= 0.0)
    }
}

/// Largest integer `n` with `n / (cg mu2) < 1 / mu1`, i.e. `n mu1 < cg mu2`.
fn ell_prime(params: &ModelParams) -> u32 {
    let budget = params.cg as f64 * params.mu2;
    let mut n = (budget / params.mu1).floor().max(0.0) as u32;
    while n > 0 && n as f64 * params.mu1 >= budget {
        n -= 1;
    }
    while (n + 1) as f64 * params.mu1 < budget {
        n += 1;
    }
    n
}

pub fn constants(params: &ModelParams, k: u32, l: u32) -> Result<HeuristicConstants> {
    if k + l >= params.cp {
        return Err(Error::NoDecidingNp(k + l));
    }
    let ModelParams {
        cp,
        cg,
        mu0,
        mu1,
        mu2,
        h0,
        h1,
        h2,
    } = *params;
    let (cpf, cgf) = (cp as f64, cg as f64);
    let j = cp - k - l;

    let b = h1 / mu1 - h2 / mu2;
    let c = h0 / cpf * (1.0 / mu1 - 1.0 / mu2);
    let queued = l >= cg;
    let slots = (l + 1) as f64 / cgf;
    let b_l = queued.then(|| h1 / mu1 - slots * h2 / mu2);
    let c_l = queued.then(|| h0 / cpf * (1.0 / mu1 - slots / mu2));
    let y_l = queued.then(|| cpf - l as f64 - 1.0 + cgf * mu2 / mu1);
    let ell_prime = (queued && c > 0.0).then(|| ell_prime(params));

    let c_prime = -h0 / (cgf * mu2);
    let b_prime = (h1 - h2) / mu1 - cpf * h2 / (cgf * mu2);
    let triage = j as f64 * mu0;
    let w = triage / (triage + k as f64 * mu1 + cgf * mu2);

    Ok(HeuristicConstants {
        k,
        l,
        j_implied: j,
        b,
        c,
        b_l,
        c_l,
        ell_prime,
        y_l,
        c_prime,
        b_prime,
        w,
    })
}

/// `ceil(num / den)` for a possibly negative numerator.
fn ceil_div(num: i64, den: u32) -> i64 {
    -((-num).div_euclid(den as i64))
}

/// Upstream term of `H0` for `l >= cg`: `h0` times the area difference of
/// the two deterministic systems with initial blocking at station 2.
fn upstream_blocked(params: &ModelParams, consts: &HeuristicConstants, i: u32) -> f64 {
    let (cp, cg) = (params.cp, params.cg as f64);
    let (i, k, l) = (i as i64, consts.k as i64, consts.l as i64);
    let step = 1.0 / (cg * params.mu2);
    let queue_tail = |from: i64| -> f64 {
        (from..=l)
            .map(|r| ceil_div(i - k - r, cp) as f64)
            .sum::<f64>()
            * step
    };
    let c_l = consts.c_l.expect("queued constants");
    let area = if consts.c <= 0.0 {
        ceil_div(i - k, cp) as f64 * (1.0 / params.mu1 - 1.0 / params.mu2)
            - queue_tail(params.cg as i64)
    } else if c_l <= 0.0 {
        let lp = consts.ell_prime.expect("ell' defined when c > 0") as i64;
        ceil_div(i - k - lp, cp) as f64 * (1.0 / params.mu1 - (lp + 1) as f64 * step)
            - queue_tail(lp + 1)
    } else {
        ceil_div(i - l, cp) as f64 * (1.0 / params.mu1 - (l + 1) as f64 * step)
    };
    area * params.h0
}

/// Upstream term without blocking: `ceil((i - k) / cp) (1/mu1 - 1/mu2) h0`.
fn upstream_free(params: &ModelParams, k: u32, i: u32) -> f64 {
    ceil_div(i as i64 - k as i64, params.cp) as f64
        * (1.0 / params.mu1 - 1.0 / params.mu2)
        * params.h0
}

/// Slow-triage estimate `H0` (the piecewise form with ceilings).
pub fn h_zero(params: &ModelParams, state: &State) -> Result<f64> {
    check_decision(params, state)?;
    let consts = constants(params, state.k, state.l)?;
    Ok(match consts.b_l {
        Some(b_l) => upstream_blocked(params, &consts, state.i) + b_l,
        None if consts.c <= 0.0 => upstream_free(params, state.k, state.i) + consts.b,
        None => consts.b,
    })
}

/// Affine counterpart of [`h_zero`]: `i c_l + b_l` or `i c + b`.
pub fn h_zero_linear(params: &ModelParams, state: &State) -> Result<f64> {
    check_decision(params, state)?;
    let consts = constants(params, state.k, state.l)?;
    let i = state.i as f64;
    Ok(match (consts.b_l, consts.c_l) {
        (Some(b_l), Some(c_l)) => i * c_l + b_l,
        _ => i * consts.c + consts.b,
    })
}

/// Fast-triage estimate `Hinf = (i - y_l) c' + b'`, defined for `l >= cg`.
pub fn h_infinity(params: &ModelParams, state: &State) -> Result<f64> {
    check_decision(params, state)?;
    let consts = constants(params, state.k, state.l)?;
    let y_l = consts.y_l.ok_or_else(|| {
        Error::InvalidArgument(format!("Hinf is defined only for l >= cg (state {state})"))
    })?;
    Ok((state.i as f64 - y_l) * consts.c_prime + consts.b_prime)
}

fn blended(
    params: &ModelParams,
    state: &State,
    slow: impl FnOnce(&ModelParams, &State) -> Result<f64>,
) -> Result<f64> {
    check_decision(params, state)?;
    let consts = constants(params, state.k, state.l)?;
    if state.i == 0 {
        return Ok(consts.b_l.unwrap_or(consts.b));
    }
    if consts.b_l.is_none() {
        return slow(params, state);
    }
    if consts.degenerate() {
        return Ok(-1.0);
    }
    let w = consts.w;
    Ok(w * h_infinity(params, state)? + (1.0 - w) * slow(params, state)?)
}

/// Piecewise-linear approximation `H` of the value difference.
pub fn h_piecewise(params: &ModelParams, state: &State) -> Result<f64> {
    blended(params, state, h_zero)
}

/// Linear approximation `H_Lin` of the value difference.
pub fn h_linear(params: &ModelParams, state: &State) -> Result<f64> {
    blended(params, state, h_zero_linear)
}

/// Collaborate iff `H > 0`.
pub fn action_h(params: &ModelParams, state: &State) -> Result<Action> {
    Ok(Action::from_bool(h_piecewise(params, state)? > 0.0))
}

/// Collaborate iff `H_Lin > 0`.
pub fn action_h_lin(params: &ModelParams, state: &State) -> Result<Action> {
    Ok(Action::from_bool(h_linear(params, state)? > 0.0))
}

/// A threshold on the upstream queue that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Cutoff(pub f64);

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_finite() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{}", nonfinite_label(self.0))
        }
    }
}

fn nonfinite_label(x: f64) -> &'static str {
    if x.is_nan() {
        "nan"
    } else if x > 0.0 {
        "inf"
    } else {
        "-inf"
    }
}

impl Serialize for Cutoff {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            serializer.serialize_f64(self.0)
        } else {
            serializer.serialize_str(nonfinite_label(self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(x) => Ok(Cutoff(x)),
            Raw::Text(s) => match s.as_str() {
                "inf" => Ok(Cutoff(f64::INFINITY)),
                "-inf" => Ok(Cutoff(f64::NEG_INFINITY)),
                "nan" => Ok(Cutoff(f64::NAN)),
                other => Err(serde::de::Error::custom(format!(
                    "invalid cutoff '{other}'"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    AlwaysNonCollab,
    AlwaysCollab,
    /// Collaborate iff `i < R`.
    CollabBelow(Cutoff),
    /// Collaborate iff `i > R`.
    CollabAbove(Cutoff),
}

/// The action `H_Lin` suggests along the row `(i, cp - k - l, k, l)`,
/// written as an explicit rule in `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub k: u32,
    pub l: u32,
    pub kind: RuleKind,
    /// Action at `i = 0`, where both heuristics use the base-case sign of
    /// `b` (or `b_l`).
    pub base_action: Action,
    pub c_tilde: Option<f64>,
    pub b_tilde: Option<f64>,
    pub r1: Option<Cutoff>,
    pub r2: Option<Cutoff>,
}

impl ThresholdRule {
    pub fn action(&self, i: u32) -> Action {
        if i == 0 {
            return self.base_action;
        }
        let i = i as f64;
        Action::from_bool(match self.kind {
            RuleKind::AlwaysNonCollab => false,
            RuleKind::AlwaysCollab => true,
            RuleKind::CollabBelow(r) => i < r.0,
            RuleKind::CollabAbove(r) => i > r.0,
        })
    }
}

pub fn threshold_form(params: &ModelParams, k: u32, l: u32) -> Result<ThresholdRule> {
    let consts = constants(params, k, l)?;
    let mut rule = ThresholdRule {
        k,
        l,
        kind: RuleKind::AlwaysNonCollab,
        base_action: Action::from_bool(consts.b_l.unwrap_or(consts.b) > 0.0),
        c_tilde: None,
        b_tilde: None,
        r1: None,
        r2: None,
    };
    match consts.queued() {
        Some(_) if consts.degenerate() => {}
        Some((b_l, c_l, y_l)) => {
            let w = consts.w;
            let c_tilde = w * consts.c_prime + (1.0 - w) * c_l;
            let b_tilde = w * (-y_l * consts.c_prime + consts.b_prime) + (1.0 - w) * b_l;
            let r2 = if c_tilde != 0.0 {
                -b_tilde / c_tilde
            } else if b_tilde <= 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            rule.c_tilde = Some(c_tilde);
            rule.b_tilde = Some(b_tilde);
            rule.r2 = Some(Cutoff(r2));
            rule.kind = if c_tilde <= 0.0 {
                RuleKind::CollabBelow(Cutoff(r2))
            } else {
                RuleKind::CollabAbove(Cutoff(r2))
            };
        }
        None if params.mu1 > params.mu2 => {
            let b = params.h1 / params.mu1 - params.h2 / params.mu2;
            let r1 = -(b * params.cp as f64) / ((1.0 / params.mu1 - 1.0 / params.mu2) * params.h0);
            rule.r1 = Some(Cutoff(r1));
            rule.kind = RuleKind::CollabBelow(Cutoff(r1));
        }
        None => rule.kind = RuleKind::AlwaysCollab,
    }
    Ok(rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Enough physicians that nobody ever waits at station 2; needs
    /// `mu1 >= mu2`.
    NoInitialBlock,
    /// Pairs already queued at station 2 wait their turn, later pairs do
    /// not; needs `l >= cg` and `1/mu0 > max(1/mu1, cp/(cg mu2))`.
    InitialBlock,
}

/// Closed-form `h0` times the upstream area difference between the system
/// that starts after a non-collaborative choice and the one that starts after
/// a collaborative choice.
pub fn upstream_difference(params: &ModelParams, state: &State, mode: OracleMode) -> Result<f64> {
    check_oracle_mode(params, state, mode)?;
    match mode {
        OracleMode::NoInitialBlock => Ok(upstream_free(params, state.k, state.i)),
        OracleMode::InitialBlock => {
            let consts = constants(params, state.k, state.l)?;
            Ok(upstream_blocked(params, &consts, state.i))
        }
    }
}

fn check_oracle_mode(params: &ModelParams, state: &State, mode: OracleMode) -> Result<()> {
    check_decision(params, state)?;
    match mode {
        OracleMode::NoInitialBlock if params.mu1 < params.mu2 => {
            Err(Error::OraclePrecondition(format!(
                "no-blocking trace needs mu1 >= mu2 (mu1 = {}, mu2 = {})",
                params.mu1, params.mu2
            )))
        }
        OracleMode::InitialBlock if state.l < params.cg => Err(Error::OraclePrecondition(format!(
            "initial-blocking trace needs l >= cg (l = {}, cg = {})",
            state.l, params.cg
        ))),
        OracleMode::InitialBlock
            if 1.0 / params.mu0
                <= (1.0 / params.mu1).max(params.cp as f64 / (params.cg as f64 * params.mu2)) =>
        {
            Err(Error::OraclePrecondition(
                "initial-blocking trace needs 1/mu0 > max(1/mu1, cp/(cg mu2))".into(),
            ))
        }
        _ => Ok(()),
    }
}

#[derive(Debug, PartialEq)]
struct Ready(f64);

impl Eq for Ready {}

impl PartialOrd for Ready {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ready {
    // min-heap on time
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}

/// Integral of the upstream population (waiting plus in triage) of one
/// deterministic system under always-collaborative control.
fn upstream_area(params: &ModelParams, start: &State, mode: OracleMode) -> f64 {
    let triage = 1.0 / params.mu0;
    let collab = 1.0 / params.mu2;
    let cg = params.cg as f64;

    let mut ready = BinaryHeap::new();
    let mut completions = Vec::with_capacity((start.i + start.j) as usize);
    for _ in 0..start.j {
        completions.push(triage);
        ready.push(Ready(triage + collab));
    }
    for _ in 0..start.k {
        ready.push(Ready(1.0 / params.mu1));
    }
    for position in 1..=start.l {
        let done = match mode {
            OracleMode::NoInitialBlock => collab,
            OracleMode::InitialBlock => position.max(params.cg) as f64 / (cg * params.mu2),
        };
        ready.push(Ready(done));
    }
    for _ in 0..start.i {
        let Ready(free) = ready.pop().expect("at least one NP");
        let done = free + triage;
        completions.push(done);
        ready.push(Ready(done + collab));
    }

    completions.sort_by(f64::total_cmp);
    let mut population = completions.len() as f64;
    let mut area = 0.0;
    let mut last = 0.0;
    for t in completions {
        area += population * (t - last);
        population -= 1.0;
        last = t;
    }
    area
}

/// Replays both deterministic systems from `state` and returns
/// `h0 * (area after choosing station 1 - area after choosing station 2)`.
pub fn deterministic_area_oracle(
    params: &ModelParams,
    state: &State,
    mode: OracleMode,
) -> Result<f64> {
    check_oracle_mode(params, state, mode)?;
    let noncollab = upstream_area(
        params,
        &State::new(state.i, state.j - 1, state.k + 1, state.l),
        mode,
    );
    let collab = upstream_area(
        params,
        &State::new(state.i, state.j - 1, state.k, state.l + 1),
        mode,
    );
    Ok(params.h0 * (noncollab - collab))
}
