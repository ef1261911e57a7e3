//! Control policies: the four benchmarks, the two heuristic policies, a
//! user-supplied action table and the optimal policy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics;
use crate::model::{check_decision, Action, ModelParams, State};
use crate::solver::{solve_optimal, ValueTable};

pub const DEFAULT_PI2_THRESHOLD: u32 = 10;

/// Explicit per-state actions, as read from a JSON list of
/// `{"state": [i,j,k,l], "action": 0|1}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<CustomEntry>", into = "Vec<CustomEntry>")]
pub struct CustomPolicy {
    actions: BTreeMap<State, u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomEntry {
    pub state: State,
    pub action: u8,
}

impl From<Vec<CustomEntry>> for CustomPolicy {
    fn from(entries: Vec<CustomEntry>) -> Self {
        Self {
            actions: entries.into_iter().map(|e| (e.state, e.action)).collect(),
        }
    }
}

impl From<CustomPolicy> for Vec<CustomEntry> {
    fn from(policy: CustomPolicy) -> Self {
        policy
            .actions
            .into_iter()
            .map(|(state, action)| CustomEntry { state, action })
            .collect()
    }
}

impl CustomPolicy {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn insert(&mut self, state: State, action: u8) {
        self.actions.insert(state, action);
    }

    pub fn get(&self, state: &State) -> Option<u8> {
        self.actions.get(state).copied()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl FromIterator<(State, u8)> for CustomPolicy {
    fn from_iter<T: IntoIterator<Item = (State, u8)>>(iter: T) -> Self {
        Self {
            actions: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Never collaborate.
    Pi1AlwaysNonCollab,
    /// Collaborate iff fewer than `threshold` patients are waiting.
    Pi2CollabBelow {
        threshold: u32,
    },
    /// Always collaborate.
    Pi3AlwaysCollab,
    /// Collaborate iff a physician is free (`l < cg`).
    Pi4CollabIfGpFree,
    /// Collaborate iff `H > 0`.
    HeurPiecewise,
    /// Collaborate iff `H_Lin > 0`.
    HeurLinear,
    CustomTable {
        table: CustomPolicy,
    },
    /// The optimal action from backward induction.
    OptimalOracle,
}

impl PolicySpec {
    pub fn pi2() -> Self {
        PolicySpec::Pi2CollabBelow {
            threshold: DEFAULT_PI2_THRESHOLD,
        }
    }

    /// The six policies compared in the benchmark tables, heuristics first.
    pub fn benchmark_set() -> Vec<PolicySpec> {
        vec![
            PolicySpec::HeurPiecewise,
            PolicySpec::HeurLinear,
            PolicySpec::Pi1AlwaysNonCollab,
            PolicySpec::pi2(),
            PolicySpec::Pi3AlwaysCollab,
            PolicySpec::Pi4CollabIfGpFree,
        ]
    }

    /// Short label used in CSV output and tables.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Pi1AlwaysNonCollab => "pi1".into(),
            PolicySpec::Pi2CollabBelow { threshold } if *threshold == DEFAULT_PI2_THRESHOLD => {
                "pi2".into()
            }
            PolicySpec::Pi2CollabBelow { threshold } => format!("pi2:{threshold}"),
            PolicySpec::Pi3AlwaysCollab => "pi3".into(),
            PolicySpec::Pi4CollabIfGpFree => "pi4".into(),
            PolicySpec::HeurPiecewise => "heur".into(),
            PolicySpec::HeurLinear => "heur-lin".into(),
            PolicySpec::CustomTable { .. } => "custom".into(),
            PolicySpec::OptimalOracle => "optimal".into(),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    /// Parses `pi1 | pi2[:T] | pi3 | pi4 | heur | heur-lin | optimal |
    /// custom:<path.json>`; the custom table is read from disk.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let spec = match (head, arg) {
            ("pi1", None) => PolicySpec::Pi1AlwaysNonCollab,
            ("pi2", None) => PolicySpec::pi2(),
            ("pi2", Some(t)) => PolicySpec::Pi2CollabBelow {
                threshold: t.parse().map_err(|_| Error::UnknownPolicy(s.into()))?,
            },
            ("pi3", None) => PolicySpec::Pi3AlwaysCollab,
            ("pi4", None) => PolicySpec::Pi4CollabIfGpFree,
            ("heur", None) => PolicySpec::HeurPiecewise,
            ("heur-lin", None) => PolicySpec::HeurLinear,
            ("optimal", None) => PolicySpec::OptimalOracle,
            ("custom", Some(path)) if !path.is_empty() => PolicySpec::CustomTable {
                table: CustomPolicy::from_path(path)?,
            },
            _ => return Err(Error::UnknownPolicy(s.into())),
        };
        Ok(spec)
    }
}

/// Action of `spec` at a decision state. The optimal policy is resolved by
/// solving up to the level of `state`, which covers every state its action
/// depends on; use [`Policy::bind`] to reuse one solve across many states.
pub fn policy_action(spec: &PolicySpec, params: &ModelParams, state: &State) -> Result<Action> {
    check_decision(params, state)?;
    match spec {
        PolicySpec::OptimalOracle => solve_optimal(params, state.level()).action(state),
        _ => stateless_action(spec, params, state),
    }
}

fn stateless_action(spec: &PolicySpec, params: &ModelParams, state: &State) -> Result<Action> {
    Ok(match spec {
        PolicySpec::Pi1AlwaysNonCollab => Action::NonCollab,
        PolicySpec::Pi2CollabBelow { threshold } => Action::from_bool(state.i < *threshold),
        PolicySpec::Pi3AlwaysCollab => Action::Collab,
        PolicySpec::Pi4CollabIfGpFree => Action::from_bool(state.l < params.cg),
        PolicySpec::HeurPiecewise => heuristics::action_h(params, state)?,
        PolicySpec::HeurLinear => heuristics::action_h_lin(params, state)?,
        PolicySpec::CustomTable { table } => {
            let raw = table.get(state).ok_or(Error::MissingPolicyEntry(*state))?;
            Action::from_u8(raw).ok_or(Error::ActionOutOfRange {
                state: *state,
                action: raw,
            })?
        }
        PolicySpec::OptimalOracle => unreachable!("resolved by the caller"),
    })
}

/// A policy ready for repeated queries; the optimal policy carries its
/// solved table.
#[derive(Debug, Clone)]
pub struct Policy {
    spec: PolicySpec,
    oracle: Option<Arc<ValueTable>>,
}

impl Policy {
    pub fn bind(spec: PolicySpec, params: &ModelParams, m_max: u32) -> Result<Self> {
        params.validate()?;
        let oracle = matches!(spec, PolicySpec::OptimalOracle)
            .then(|| Arc::new(solve_optimal(params, m_max)));
        Ok(Self { spec, oracle })
    }

    /// Reuses an already solved optimal table.
    pub fn optimal(table: Arc<ValueTable>) -> Self {
        Self {
            spec: PolicySpec::OptimalOracle,
            oracle: Some(table),
        }
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn action(&self, params: &ModelParams, state: &State) -> Result<Action> {
        check_decision(params, state)?;
        match &self.oracle {
            Some(table) => table.action(state),
            None => stateless_action(&self.spec, params, state),
        }
    }
}
