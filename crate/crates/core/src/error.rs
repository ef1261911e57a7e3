use thiserror::Error;

use crate::model::State;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("state {0} is not in the state space")]
    InfeasibleState(State),

    #[error("absorbing state has no rate")]
    AbsorbingState,

    #[error("state {0} is not a decision state")]
    NotDecisionState(State),

    #[error("state {0} requires an action")]
    MissingAction(State),

    #[error("action supplied for state {0}, which has no patient in triage")]
    UnexpectedAction(State),

    #[error("action {action} at state {state} is out of range")]
    ActionOutOfRange { state: State, action: u8 },

    #[error("state {state} lies outside the table (level {level} > m_max {m_max})")]
    OutsideTable {
        state: State,
        level: u32,
        m_max: u32,
    },

    #[error("no deciding NP: k + l = {0} leaves no patient in triage")]
    NoDecidingNp(u32),

    #[error("custom policy has no entry for state {0}")]
    MissingPolicyEntry(State),

    #[error("unknown policy '{0}'")]
    UnknownPolicy(String),

    #[error("oracle precondition not met: {0}")]
    OraclePrecondition(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("config {id}: {source}")]
    Sweep {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
