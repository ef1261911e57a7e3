//! Backward induction on the clearing-level layers.
//!
//! Every transition lowers the level `2(i + j) + k + l` by one, so values are
//! filled in ascending level order with a single pass and no convergence
//! loop. The same traversal serves the optimal solve and fixed-policy
//! evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, after_triage, is_decision_state, Action, ModelParams, State, StateSpace};
use crate::policies::{Policy, PolicySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Optimal,
    UnderPolicy(PolicySpec),
}

/// Per-state expected clearing cost, plus the action used at each decision
/// state (the minimising one in optimal mode, the policy's otherwise).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TableRecord", into = "TableRecord")]
pub struct ValueTable {
    params: ModelParams,
    space: StateSpace,
    values: Vec<f64>,
    actions: Vec<Option<Action>>,
    mode: Mode,
}

impl ValueTable {
    fn empty(params: ModelParams, m_max: u32, mode: Mode) -> Self {
        let space = StateSpace::new(&params, m_max);
        let slots = space.slots();
        Self {
            params,
            space,
            values: vec![f64::NAN; slots],
            actions: vec![None; slots],
            mode,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn m_max(&self) -> u32 {
        self.space.m_max()
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    fn slot(&self, state: &State) -> Result<usize> {
        if !state.is_feasible(&self.params) {
            return Err(Error::InfeasibleState(*state));
        }
        if state.level() > self.m_max() {
            return Err(Error::OutsideTable {
                state: *state,
                level: state.level(),
                m_max: self.m_max(),
            });
        }
        self.space
            .index(state)
            .ok_or(Error::InfeasibleState(*state))
    }

    pub fn value(&self, state: &State) -> Result<f64> {
        self.slot(state).map(|idx| self.values[idx])
    }

    pub fn action(&self, state: &State) -> Result<Action> {
        let idx = self.slot(state)?;
        self.actions[idx].ok_or(Error::NotDecisionState(*state))
    }

    /// `(state, value, action)` for every stored state in traversal order.
    pub fn entries(&self) -> impl Iterator<Item = (State, f64, Option<Action>)> + '_ {
        self.space.states().map(move |s| {
            let idx = self.space.index(s).expect("enumerated state has a slot");
            (*s, self.values[idx], self.actions[idx])
        })
    }

    #[cfg(test)]
    pub(crate) fn set_value(&mut self, state: &State, value: f64) {
        let idx = self.slot(state).unwrap();
        self.values[idx] = value;
    }

    fn stored(&self, state: &State) -> f64 {
        self.values[self
            .space
            .index(state)
            .expect("transition target is enumerated")]
    }

    /// Right-hand side of the defining equation at `state`: the one-step
    /// expectation with the triage branch chosen by `triage`.
    fn backup(&self, state: &State, triage: impl FnOnce(f64, f64) -> f64) -> f64 {
        let p = &self.params;
        let rate = model::rate_unchecked(p, state);
        let mut acc = model::cost_rate(p, state);
        if state.j >= 1 {
            let v0 = self.stored(&after_triage(state, Action::NonCollab));
            let v1 = self.stored(&after_triage(state, Action::Collab));
            acc += state.j as f64 * p.mu0 * triage(v0, v1);
        }
        if state.k >= 1 {
            acc +=
                state.k as f64 * p.mu1 * self.stored(&downstream_next(state, state.k - 1, state.l));
        }
        if state.l >= 1 {
            acc += state.l.min(p.cg) as f64
                * p.mu2
                * self.stored(&downstream_next(state, state.k, state.l - 1));
        }
        acc / rate
    }
}

fn downstream_next(state: &State, k: u32, l: u32) -> State {
    if state.i == 0 {
        State::new(0, state.j, k, l)
    } else {
        State::new(state.i - 1, state.j + 1, k, l)
    }
}

fn pick(action: Action, v0: f64, v1: f64) -> f64 {
    match action {
        Action::NonCollab => v0,
        Action::Collab => v1,
    }
}

/// Optimal values for every state with level at most `m_max`. At each
/// decision state the collaborative branch is recorded only when it is
/// strictly cheaper; ties go to non-collaborative service.
pub fn solve_optimal(params: &ModelParams, m_max: u32) -> ValueTable {
    let mut table = ValueTable::empty(*params, m_max, Mode::Optimal);
    let layers = table.space.layers().to_vec();
    for state in layers.iter().flatten() {
        let idx = table.space.index(state).expect("enumerated");
        if state.is_zero() {
            table.values[idx] = 0.0;
            continue;
        }
        let mut chosen = None;
        let value = table.backup(state, |v0, v1| {
            let a = Action::from_bool(v0 - v1 > 0.0);
            chosen = Some(a);
            pick(a, v0, v1)
        });
        table.values[idx] = value;
        table.actions[idx] = chosen;
    }
    table
}

/// Solves up to the level of `initial`, which is all the initial state needs.
pub fn solve_from(params: &ModelParams, initial: &State) -> ValueTable {
    solve_optimal(params, initial.level())
}

/// `D(i,j,k,l) = v(i,j-1,k+1,l) - v(i,j-1,k,l+1)`; positive means
/// collaborating is strictly cheaper.
pub fn value_difference(table: &ValueTable, state: &State) -> Result<f64> {
    if !is_decision_state(&table.params, state) {
        return Err(Error::NotDecisionState(*state));
    }
    let v0 = table.value(&after_triage(state, Action::NonCollab))?;
    let v1 = table.value(&after_triage(state, Action::Collab))?;
    Ok(v0 - v1)
}

/// Expected clearing cost of `policy` from every state with level at most
/// `m_max`.
pub fn evaluate_policy(
    params: &ModelParams,
    policy: &PolicySpec,
    m_max: u32,
) -> Result<ValueTable> {
    let bound = Policy::bind(policy.clone(), params, m_max)?;
    evaluate_bound(params, &bound, m_max)
}

pub(crate) fn evaluate_bound(
    params: &ModelParams,
    policy: &Policy,
    m_max: u32,
) -> Result<ValueTable> {
    let mut table = ValueTable::empty(*params, m_max, Mode::UnderPolicy(policy.spec().clone()));
    let layers = table.space.layers().to_vec();
    for state in layers.iter().flatten() {
        let idx = table.space.index(state).expect("enumerated");
        if state.is_zero() {
            table.values[idx] = 0.0;
            continue;
        }
        let action = if state.j >= 1 {
            Some(policy.action(params, state)?)
        } else {
            None
        };
        table.values[idx] = table.backup(state, |v0, v1| {
            pick(action.expect("decision state"), v0, v1)
        });
        table.actions[idx] = action;
    }
    Ok(table)
}

/// Largest relative violation `|lhs - rhs| / max(1, |lhs|)` of the table's
/// defining equations over all stored states.
pub fn bellman_residual(table: &ValueTable) -> f64 {
    let mut worst = 0.0f64;
    for (state, lhs, action) in table.entries() {
        let rhs = if state.is_zero() {
            0.0
        } else {
            match (&table.mode, action) {
                (Mode::Optimal, _) => table.backup(&state, f64::min),
                (Mode::UnderPolicy(_), Some(a)) => table.backup(&state, |v0, v1| pick(a, v0, v1)),
                (Mode::UnderPolicy(_), None) => table.backup(&state, |_, _| f64::NAN),
            }
        };
        let resid = (lhs - rhs).abs() / lhs.abs().max(1.0);
        if resid.is_nan() {
            return f64::INFINITY;
        }
        worst = worst.max(resid);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stabilization {
    Stable(Action),
    NotStabilized,
}

/// Optimal action along `i = 0..=i_max` for fixed `(j, k, l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub fixed: (u32, u32, u32),
    pub i_max: u32,
    pub actions: Vec<Action>,
    /// Values of `i` at which the action differs from the one at `i - 1`.
    pub sign_changes: Vec<u32>,
    /// The tail action, reported as stable when the last switch happens in
    /// the first half of the scan.
    pub stabilized: Stabilization,
}

pub fn find_threshold(
    params: &ModelParams,
    j: u32,
    k: u32,
    l: u32,
    i_max: u32,
) -> Result<ThresholdReport> {
    if j == 0 || j + k + l != params.cp {
        return Err(Error::InvalidArgument(format!(
            "threshold scan needs j >= 1 and j + k + l = cp (got j={j}, k={k}, l={l}, cp={})",
            params.cp
        )));
    }
    let table = solve_optimal(params, State::new(i_max, j, k, l).level());
    let actions = (0..=i_max)
        .map(|i| table.action(&State::new(i, j, k, l)))
        .collect::<Result<Vec<_>>>()?;
    let sign_changes: Vec<u32> = (1..=i_max)
        .filter(|&i| actions[i as usize] != actions[i as usize - 1])
        .collect();
    let last_switch = sign_changes.last().copied().unwrap_or(0);
    let stabilized = if last_switch <= i_max / 2 {
        Stabilization::Stable(*actions.last().expect("non-empty scan"))
    } else {
        Stabilization::NotStabilized
    };
    Ok(ThresholdReport {
        fixed: (j, k, l),
        i_max,
        actions,
        sign_changes,
        stabilized,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableEntry {
    state: State,
    value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<Action>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableRecord {
    params: ModelParams,
    m_max: u32,
    mode: Mode,
    entries: Vec<TableEntry>,
}

impl From<ValueTable> for TableRecord {
    fn from(table: ValueTable) -> Self {
        let entries = table
            .entries()
            .map(|(state, value, action)| TableEntry {
                state,
                value,
                action,
            })
            .collect();
        TableRecord {
            params: table.params,
            m_max: table.m_max(),
            mode: table.mode,
            entries,
        }
    }
}

impl TryFrom<TableRecord> for ValueTable {
    type Error = Error;

    fn try_from(record: TableRecord) -> Result<Self> {
        record.params.validate()?;
        let mut table = ValueTable::empty(record.params, record.m_max, record.mode);
        if record.entries.len() != table.space.len() {
            return Err(Error::InvalidArgument(format!(
                "table holds {} entries, expected {}",
                record.entries.len(),
                table.space.len()
            )));
        }
        for entry in record.entries {
            let idx = table.slot(&entry.state)?;
            table.values[idx] = entry.value;
            table.actions[idx] = entry.action;
        }
        Ok(table)
    }
}
