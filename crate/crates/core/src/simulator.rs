//! Seeded Monte Carlo simulation of the controlled clearing system.
//!
//! Random numbers come from ChaCha8 keyed by the run seed, with replication
//! `r` on stream `r` of that key. Within a replication each event draws two
//! 64-bit words in order (sojourn, then event category), so event `e` reads
//! words `4e..4e+3` of its stream. Replications are therefore independent of
//! scheduling and can run in any order or in parallel.

use rand::distributions::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, after_triage, Action, ModelParams, State};
use crate::policies::{Policy, PolicySpec};

/// Outcome of one simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    pub cost: f64,
    pub events: u64,
}

pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Runs one trajectory from `initial` until the system is empty and returns
/// the accumulated holding cost.
pub fn simulate_once<R: Rng + ?Sized>(
    params: &ModelParams,
    policy: &Policy,
    initial: &State,
    rng: &mut R,
) -> Result<Replication> {
    if !initial.is_feasible(params) {
        return Err(Error::InfeasibleState(*initial));
    }
    let mut state = *initial;
    let mut cost = 0.0;
    let mut events = 0u64;
    while !state.is_zero() {
        let rate = model::rate_unchecked(params, &state);
        let u: f64 = Open01.sample(rng);
        let sojourn = -u.ln() / rate;
        cost += model::cost_rate(params, &state) * sojourn;

        let pick = rng.gen::<f64>() * rate;
        let triage = state.j as f64 * params.mu0;
        let station1 = state.k as f64 * params.mu1;
        state = if pick < triage {
            let action: Action = policy.action(params, &state)?;
            after_triage(&state, action)
        } else if pick < triage + station1 || state.l == 0 {
            downstream(&state, state.k - 1, state.l)
        } else {
            downstream(&state, state.k, state.l - 1)
        };
        events += 1;
    }
    Ok(Replication { cost, events })
}

fn downstream(state: &State, k: u32, l: u32) -> State {
    if state.i == 0 {
        State::new(0, state.j, k, l)
    } else {
        State::new(state.i - 1, state.j + 1, k, l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub replications: u64,
    pub mean_cost: f64,
    /// Sample standard deviation over `sqrt(replications)`; zero when
    /// there is a single replication.
    pub std_error: f64,
    pub std_error_available: bool,
    pub seed: u64,
    pub initial: State,
    pub policy: PolicySpec,
}

impl SimResult {
    pub fn half_width_95(&self) -> f64 {
        1.96 * self.std_error
    }
}

pub fn simulate_many(
    params: &ModelParams,
    policy: &PolicySpec,
    initial: &State,
    n: u64,
    seed: u64,
) -> Result<SimResult> {
    let bound = Policy::bind(policy.clone(), params, initial.level())?;
    simulate_bound(params, &bound, initial, n, seed)
}

pub(crate) fn simulate_bound(
    params: &ModelParams,
    policy: &Policy,
    initial: &State,
    n: u64,
    seed: u64,
) -> Result<SimResult> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "at least one replication is required".into(),
        ));
    }
    let costs = (0..n)
        .into_par_iter()
        .map(|r| {
            simulate_once(params, policy, initial, &mut replication_rng(seed, r))
                .map(|rep| rep.cost)
        })
        .collect::<Result<Vec<f64>>>()?;

    // Aggregate in replication order so the result is independent of threads.
    let (mean, m2) = costs
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(mean, m2), (idx, &x)| {
            let count = (idx + 1) as f64;
            let delta = x - mean;
            let mean = mean + delta / count;
            (mean, m2 + delta * (x - mean))
        });
    let (std_error, available) = if n > 1 {
        ((m2 / (n - 1) as f64).sqrt() / (n as f64).sqrt(), true)
    } else {
        (0.0, false)
    };
    Ok(SimResult {
        replications: n,
        mean_cost: mean,
        std_error,
        std_error_available: available,
        seed,
        initial: *initial,
        policy: policy.spec().clone(),
    })
}
