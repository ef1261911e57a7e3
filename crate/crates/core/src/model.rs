//! Problem instance, state space and transition structure.
//!
//! A state is the tuple `(i, j, k, l)`:
//!
//! * `i` patients waiting for triage (not yet in service),
//! * `j` patients in triage,
//! * `k` patients in non-collaborative service (station 1),
//! * `l` patients at the collaborative station (station 2), in service or
//!   waiting for a physician.
//!
//! Every NP is tied to the patient it serves, so `j + k + l <= cp`, and the
//! upstream queue is non-empty only when every NP is busy. Each event
//! completes one service stage and lowers the clearing level
//! `2(i + j) + k + l` by exactly one, so the state graph is acyclic and can
//! be swept layer by layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub cp: u32,
    pub cg: u32,
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
}

impl ModelParams {
    pub fn new(cp: u32, cg: u32, mu: [f64; 3], h: [f64; 3]) -> Result<Self> {
        let params = Self {
            cp,
            cg,
            mu0: mu[0],
            mu1: mu[1],
            mu2: mu[2],
            h0: h[0],
            h1: h[1],
            h2: h[2],
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cp == 0 || self.cg == 0 {
            return Err(Error::InvalidParams(format!(
                "staffing must be positive (cp = {}, cg = {})",
                self.cp, self.cg
            )));
        }
        for (name, rate) in [("mu0", self.mu0), ("mu1", self.mu1), ("mu2", self.mu2)] {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} = {rate} must be finite and positive"
                )));
            }
        }
        for (name, cost) in [("h0", self.h0), ("h1", self.h1), ("h2", self.h2)] {
            if !(cost.is_finite() && cost >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} = {cost} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Collaborative service is strictly more cost-efficient than
    /// non-collaborative service: `h1/mu1 > h2/mu2`.
    pub fn prefers_collab(&self) -> bool {
        self.h1 / self.mu1 > self.h2 / self.mu2
    }

    pub fn with_costs_scaled(&self, factor: f64) -> Self {
        Self {
            h0: self.h0 * factor,
            h1: self.h1 * factor,
            h2: self.h2 * factor,
            ..*self
        }
    }

    pub fn with_rates_scaled(&self, factor: f64) -> Self {
        Self {
            mu0: self.mu0 * factor,
            mu1: self.mu1 * factor,
            mu2: self.mu2 * factor,
            ..*self
        }
    }
}

/// Routing decision taken when a triage completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    NonCollab = 0,
    Collab = 1,
}

impl Action {
    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(Action::NonCollab),
            1 => Some(Action::Collab),
            _ => None,
        }
    }

    pub fn from_bool(collab: bool) -> Self {
        if collab {
            Action::Collab
        } else {
            Action::NonCollab
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = u8::deserialize(deserializer)?;
        Action::from_u8(raw)
            .ok_or_else(|| serde::de::Error::custom(format!("action must be 0 or 1, got {raw}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub i: u32,
    pub j: u32,
    pub k: u32,
    pub l: u32,
}

impl State {
    pub const ZERO: State = State {
        i: 0,
        j: 0,
        k: 0,
        l: 0,
    };

    pub const fn new(i: u32, j: u32, k: u32, l: u32) -> Self {
        Self { i, j, k, l }
    }

    /// Clearing level `2(i + j) + k + l`: the number of service completions
    /// still needed to empty the system.
    pub fn level(&self) -> u32 {
        2 * (self.i + self.j) + self.k + self.l
    }

    pub fn busy(&self) -> u32 {
        self.j + self.k + self.l
    }

    pub fn is_zero(&self) -> bool {
        *self == State::ZERO
    }

    pub fn is_feasible(&self, params: &ModelParams) -> bool {
        let busy = self.busy();
        (self.i == 0 && busy < params.cp) || busy == params.cp
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.i, self.j, self.k, self.l)
    }
}

impl FromStr for State {
    type Err = Error;

    /// Parses `i,j,k,l` (optionally wrapped in parentheses or brackets).
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s
            .trim()
            .trim_matches(|c| matches!(c, '(' | ')' | '[' | ']'));
        let parts: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "state '{s}' must have four components i,j,k,l"
            )));
        }
        let mut out = [0u32; 4];
        for (slot, part) in out.iter_mut().zip(&parts) {
            *slot = part.parse().map_err(|_| {
                Error::InvalidArgument(format!(
                    "state component '{part}' is not a non-negative integer"
                ))
            })?;
        }
        Ok(State::new(out[0], out[1], out[2], out[3]))
    }
}

impl Serialize for State {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.i, self.j, self.k, self.l].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [i, j, k, l] = <[u32; 4]>::deserialize(deserializer)?;
        Ok(State::new(i, j, k, l))
    }
}

fn check_feasible(params: &ModelParams, state: &State) -> Result<()> {
    if state.is_feasible(params) {
        Ok(())
    } else {
        Err(Error::InfeasibleState(*state))
    }
}

/// Overall event rate `j mu0 + k mu1 + min(l, cg) mu2`.
pub fn total_rate(params: &ModelParams, state: &State) -> Result<f64> {
    check_feasible(params, state)?;
    if state.is_zero() {
        return Err(Error::AbsorbingState);
    }
    Ok(rate_unchecked(params, state))
}

pub(crate) fn rate_unchecked(params: &ModelParams, state: &State) -> f64 {
    state.j as f64 * params.mu0
        + state.k as f64 * params.mu1
        + state.l.min(params.cg) as f64 * params.mu2
}

/// Instantaneous holding-cost rate `(i + j) h0 + k h1 + l h2`.
pub fn cost_rate(params: &ModelParams, state: &State) -> f64 {
    (state.i + state.j) as f64 * params.h0 + state.k as f64 * params.h1 + state.l as f64 * params.h2
}

pub fn is_decision_state(params: &ModelParams, state: &State) -> bool {
    state.j >= 1 && state.is_feasible(params)
}

pub(crate) fn check_decision(params: &ModelParams, state: &State) -> Result<()> {
    if is_decision_state(params, state) {
        Ok(())
    } else {
        Err(Error::NotDecisionState(*state))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionKind {
    TriageDone(Action),
    Station1Done,
    Station2Done,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub rate: f64,
    pub next: State,
    pub kind: TransitionKind,
}

/// State reached when a triage completes under `action`.
pub fn after_triage(state: &State, action: Action) -> State {
    match action {
        Action::NonCollab => State::new(state.i, state.j - 1, state.k + 1, state.l),
        Action::Collab => State::new(state.i, state.j - 1, state.k, state.l + 1),
    }
}

/// Outgoing transitions of a non-zero state. `action` must be given exactly
/// when a patient is in triage (`j >= 1`).
pub fn transitions(
    params: &ModelParams,
    state: &State,
    action: Option<Action>,
) -> Result<Vec<Transition>> {
    check_feasible(params, state)?;
    if state.is_zero() {
        return Err(Error::AbsorbingState);
    }
    let mut out = Vec::with_capacity(3);
    match (state.j, action) {
        (0, Some(_)) => return Err(Error::UnexpectedAction(*state)),
        (0, None) => {}
        (_, None) => return Err(Error::MissingAction(*state)),
        (j, Some(a)) => out.push(Transition {
            rate: j as f64 * params.mu0,
            next: after_triage(state, a),
            kind: TransitionKind::TriageDone(a),
        }),
    }
    if state.k >= 1 {
        out.push(Transition {
            rate: state.k as f64 * params.mu1,
            next: after_downstream(state, state.k - 1, state.l),
            kind: TransitionKind::Station1Done,
        });
    }
    if state.l >= 1 {
        out.push(Transition {
            rate: state.l.min(params.cg) as f64 * params.mu2,
            next: after_downstream(state, state.k, state.l - 1),
            kind: TransitionKind::Station2Done,
        });
    }
    Ok(out)
}

/// A freed NP pulls the next waiting patient into triage, if there is one.
fn after_downstream(state: &State, k: u32, l: u32) -> State {
    if state.i == 0 {
        State::new(0, state.j, k, l)
    } else {
        State::new(state.i - 1, state.j + 1, k, l)
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, t| acc * (n - t) / (t + 1))
}

/// Every feasible state with level at most `m_max`, layered by level and
/// indexed by a perfect key into dense arrays.
///
/// The `i = 0` block holds all `(j, k, l)` with `j + k + l <= cp`; each
/// `i >= 1` block holds the compositions `j + k + l = cp`.
#[derive(Debug, Clone)]
pub struct StateSpace {
    cp: u32,
    m_max: u32,
    i_max: u32,
    empty_block: Vec<u32>,
    full_block: Vec<u32>,
    empty_len: usize,
    full_len: usize,
    layers: Vec<Vec<State>>,
}

const NO_SLOT: u32 = u32::MAX;

impl StateSpace {
    pub fn new(params: &ModelParams, m_max: u32) -> Self {
        let cp = params.cp;
        let side = (cp + 1) as usize;
        let mut empty_block = vec![NO_SLOT; side * side * side];
        let mut full_block = vec![NO_SLOT; side * side];
        let mut next = 0u32;
        for j in 0..=cp {
            for k in 0..=cp - j {
                for l in 0..=cp - j - k {
                    empty_block[(j as usize * side + k as usize) * side + l as usize] = next;
                    next += 1;
                }
            }
        }
        let empty_len = next as usize;
        debug_assert_eq!(empty_len as u64, binomial(cp as u64 + 3, 3));
        let mut next = 0u32;
        for j in 0..=cp {
            for k in 0..=cp - j {
                full_block[j as usize * side + k as usize] = next;
                next += 1;
            }
        }
        let full_len = next as usize;

        // i >= 1 states have level >= 2i + cp.
        let i_max = if m_max >= cp + 2 { (m_max - cp) / 2 } else { 0 };

        let mut layers = vec![Vec::new(); m_max as usize + 1];
        for i in 0..=i_max {
            for j in 0..=cp {
                for k in 0..=cp - j {
                    for l in 0..=cp - j - k {
                        let s = State::new(i, j, k, l);
                        if s.is_feasible(params) && s.level() <= m_max {
                            layers[s.level() as usize].push(s);
                        }
                    }
                }
            }
        }
        for layer in &mut layers {
            layer.sort_unstable();
        }

        Self {
            cp,
            m_max,
            i_max,
            empty_block,
            full_block,
            empty_len,
            full_len,
            layers,
        }
    }

    pub fn m_max(&self) -> u32 {
        self.m_max
    }

    pub fn layers(&self) -> &[Vec<State>] {
        &self.layers
    }

    pub fn states(&self) -> impl Iterator<Item = &State> {
        self.layers.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Size of the dense arrays addressed by [`StateSpace::index`].
    pub fn slots(&self) -> usize {
        self.empty_len + self.i_max as usize * self.full_len
    }

    pub fn contains(&self, state: &State) -> bool {
        state.level() <= self.m_max && self.index(state).is_some()
    }

    pub fn index(&self, state: &State) -> Option<usize> {
        let side = (self.cp + 1) as usize;
        if state.busy() > self.cp {
            return None;
        }
        let (j, k, l) = (state.j as usize, state.k as usize, state.l as usize);
        if state.i == 0 {
            let slot = self.empty_block[(j * side + k) * side + l];
            (slot != NO_SLOT).then_some(slot as usize)
        } else {
            if state.i > self.i_max || state.busy() != self.cp {
                return None;
            }
            let slot = self.full_block[j * side + k] as usize;
            Some(self.empty_len + (state.i as usize - 1) * self.full_len + slot)
        }
    }
}

/// All states of the state space with level at most `m_max`, grouped by
/// level ascending and ordered lexicographically within a level.
pub fn enumerate_states(params: &ModelParams, m_max: u32) -> Vec<Vec<State>> {
    StateSpace::new(params, m_max).layers
}
