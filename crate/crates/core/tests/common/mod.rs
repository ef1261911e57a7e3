//! Shared samplers, an independent reference solver and property checks used
//! by the property suites and the acceptance binary.
#![allow(dead_code)]

use std::collections::HashMap;

use clearq::heuristics::{self, OracleMode};
use clearq::model::{is_decision_state, ModelParams, State};
use clearq::solver::{
    bellman_residual, evaluate_policy, find_threshold, solve_optimal, value_difference,
    Stabilization,
};
use clearq::{Action, PolicySpec};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type Check = std::result::Result<(), TestCaseError>;

/// Highest upstream queue covered by the property suites.
pub const I_COVER: u32 = 30;

pub fn m_cover(p: &ModelParams) -> u32 {
    2 * (I_COVER + p.cp)
}

pub fn params(cp: u32, cg: u32, mu: [f64; 3], h: [f64; 3]) -> ModelParams {
    ModelParams::new(cp, cg, mu, h).expect("valid sample")
}

fn rate() -> impl Strategy<Value = f64> {
    0.5f64..12.0
}

fn cost() -> impl Strategy<Value = f64> {
    0.05f64..3.0
}

/// `mu2 = mu1 * ratio` and `h2 = h1 * scale * mu2 / mu1`, so `scale` is the
/// ratio of collaborative to solo cost per service.
fn shaped(
    staff: impl Strategy<Value = (u32, u32)>,
    ratio: std::ops::Range<f64>,
    scale: std::ops::Range<f64>,
) -> impl Strategy<Value = ModelParams> {
    (staff, rate(), rate(), ratio, cost(), cost(), scale).prop_map(
        |((cp, cg), mu0, mu1, ratio, h0, h1, scale)| {
            let mu2 = mu1 * ratio;
            params(cp, cg, [mu0, mu1, mu2], [h0, h1, h1 * scale * mu2 / mu1])
        },
    )
}

fn any_staff() -> impl Strategy<Value = (u32, u32)> {
    (1u32..=4, 1u32..=5)
}

pub fn any_params() -> impl Strategy<Value = ModelParams> {
    (any_staff(), rate(), rate(), rate(), cost(), cost(), cost()).prop_map(
        |((cp, cg), mu0, mu1, mu2, h0, h1, h2)| params(cp, cg, [mu0, mu1, mu2], [h0, h1, h2]),
    )
}

/// Collaboration is cheaper per service (`h2/mu2 < h1/mu1`).
pub fn assumption_params() -> impl Strategy<Value = ModelParams> {
    (
        any_staff(),
        rate(),
        rate(),
        rate(),
        cost(),
        cost(),
        0.05f64..0.95,
    )
        .prop_map(|((cp, cg), mu0, mu1, mu2, h0, h1, scale)| {
            params(cp, cg, [mu0, mu1, mu2], [h0, h1, h1 * scale * mu2 / mu1])
        })
}

/// Cheaper and at least as fast collaboration.
pub fn fast_cheap_collab() -> impl Strategy<Value = ModelParams> {
    shaped(any_staff(), 1.0..3.0, 0.05..0.95)
}

/// Mostly slow or expensive collaboration, so the non-collaborative
/// conditions hold at many states.
pub fn mostly_noncollab() -> impl Strategy<Value = ModelParams> {
    shaped((2u32..=4, 1u32..=3), 0.2..1.5, 0.6..3.0)
}

pub fn slow_collab() -> impl Strategy<Value = ModelParams> {
    (
        any_staff(),
        rate(),
        rate(),
        0.2f64..1.0,
        cost(),
        cost(),
        cost(),
    )
        .prop_map(|((cp, cg), mu0, mu1, ratio, h0, h1, h2)| {
            params(cp, cg, [mu0, mu1, mu1 * ratio], [h0, h1, h2])
        })
}

/// At least as many physicians as nurse practitioners, in one of the two
/// regimes with a constant optimal action.
pub fn enough_physicians() -> impl Strategy<Value = (bool, ModelParams)> {
    let staff = (1u32..=4, 0u32..=2).prop_map(|(cp, extra)| (cp, cp + extra));
    let collab = shaped(staff.clone(), 1.05..3.0, 0.05..0.95).prop_map(|p| (true, p));
    let solo = shaped(staff, 0.2..0.95, 1.05..3.0).prop_map(|p| (false, p));
    prop_oneof![collab, solo]
}

/// Strictly faster solo service under the cost assumption.
pub fn fast_solo() -> impl Strategy<Value = ModelParams> {
    (
        any_staff(),
        rate(),
        1.0f64..12.0,
        0.2f64..0.8,
        0.2f64..3.0,
        cost(),
        0.05f64..0.95,
    )
        .prop_map(|((cp, cg), mu0, mu1, ratio, h0, h1, scale)| {
            let mu2 = mu1 * ratio;
            params(cp, cg, [mu0, mu1, mu2], [h0, h1, h1 * scale * mu2 / mu1])
        })
}

/// Slow triage with at least one physician short of the nurse count, as the
/// initial-blocking trace requires.
pub fn slow_triage_blocked() -> impl Strategy<Value = ModelParams> {
    (
        2u32..=4,
        1u32..=3,
        rate(),
        rate(),
        0.05f64..0.95,
        cost(),
        cost(),
        cost(),
    )
        .prop_filter("cg < cp", |(cp, cg, ..)| cg < cp)
        .prop_map(|(cp, cg, mu1, mu2, u, h0, h1, h2)| {
            let mu0 = u * mu1.min(cg as f64 * mu2 / cp as f64);
            params(cp, cg, [mu0, mu1, mu2], [h0, h1, h2])
        })
}

/// Memoised recursion straight from the optimality equation, independent of
/// the library's layered tables.
pub struct Reference<'a> {
    p: &'a ModelParams,
    memo: HashMap<State, f64>,
}

impl<'a> Reference<'a> {
    pub fn new(p: &'a ModelParams) -> Self {
        Self {
            p,
            memo: HashMap::new(),
        }
    }

    pub fn value(&mut self, s: State) -> f64 {
        if s.is_zero() {
            return 0.0;
        }
        if let Some(&v) = self.memo.get(&s) {
            return v;
        }
        let p = self.p;
        let State { i, j, k, l } = s;
        let served = l.min(p.cg);
        let rate = j as f64 * p.mu0 + k as f64 * p.mu1 + served as f64 * p.mu2;
        let mut acc = (i + j) as f64 * p.h0 + k as f64 * p.h1 + l as f64 * p.h2;
        if j > 0 {
            let solo = self.value(State::new(i, j - 1, k + 1, l));
            let joint = self.value(State::new(i, j - 1, k, l + 1));
            acc += j as f64 * p.mu0 * solo.min(joint);
        }
        let refill = |k: u32, l: u32| {
            if i > 0 {
                State::new(i - 1, j + 1, k, l)
            } else {
                State::new(0, j, k, l)
            }
        };
        if k > 0 {
            acc += k as f64 * p.mu1 * self.value(refill(k - 1, l));
        }
        if l > 0 {
            acc += served as f64 * p.mu2 * self.value(refill(k, l - 1));
        }
        let v = acc / rate;
        self.memo.insert(s, v);
        v
    }

    pub fn difference(&mut self, s: State) -> f64 {
        self.value(State::new(s.i, s.j - 1, s.k + 1, s.l))
            - self.value(State::new(s.i, s.j - 1, s.k, s.l + 1))
    }
}

/// Decision states `(i, j, k, l)` with `j + k + l = cp` and `i <= i_max`,
/// plus the `i = 0` decision states with idle nurses.
pub fn decision_states(p: &ModelParams, i_max: u32) -> Vec<State> {
    let mut out = Vec::new();
    for j in 1..=p.cp {
        for k in 0..=p.cp - j {
            for l in 0..=p.cp - j - k {
                let s = State::new(0, j, k, l);
                if is_decision_state(p, &s) {
                    out.push(s);
                }
            }
        }
    }
    for i in 1..=i_max {
        for j in 1..=p.cp {
            for k in 0..=p.cp - j {
                out.push(State::new(i, j, k, p.cp - j - k));
            }
        }
    }
    out
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

pub fn benchmark_policies() -> Vec<PolicySpec> {
    PolicySpec::benchmark_set()
}

// ---- solver properties ----

pub fn check_matches_reference(p: &ModelParams) -> Check {
    let table = solve_optimal(p, m_cover(p));
    let mut reference = Reference::new(p);
    for (s, v, _) in table.entries() {
        let r = reference.value(s);
        prop_assert!(close(v, r, 1e-12), "{s}: table {v} vs reference {r}");
    }
    Ok(())
}

pub fn check_bellman_residual(p: &ModelParams) -> Check {
    let table = solve_optimal(p, m_cover(p));
    let r = bellman_residual(&table);
    prop_assert!(r <= 1e-9, "optimal residual {r}");
    for spec in benchmark_policies() {
        let eval = evaluate_policy(p, &spec, m_cover(p)).unwrap();
        let r = bellman_residual(&eval);
        prop_assert!(r <= 1e-9, "{spec} residual {r}");
    }
    Ok(())
}

pub fn check_dominance(p: &ModelParams) -> Check {
    let opt = solve_optimal(p, m_cover(p));
    for spec in benchmark_policies() {
        let eval = evaluate_policy(p, &spec, m_cover(p)).unwrap();
        for (s, v, _) in opt.entries() {
            let vp = eval.value(&s).unwrap();
            prop_assert!(
                vp >= v - 1e-9 * v.abs().max(1.0),
                "{spec} at {s}: {vp} < {v}"
            );
        }
    }
    Ok(())
}

pub fn check_optimal_oracle_policy(p: &ModelParams) -> Check {
    let opt = solve_optimal(p, m_cover(p));
    let eval = evaluate_policy(p, &PolicySpec::OptimalOracle, m_cover(p)).unwrap();
    for (s, v, _) in opt.entries() {
        prop_assert!(close(eval.value(&s).unwrap(), v, 1e-12), "{s}");
    }
    Ok(())
}

fn slack(x: f64) -> f64 {
    1e-9 * x.abs().max(1.0)
}

/// Lower bounds on adding one patient anywhere, and the upper bound on `D`
/// that holds when `mu1 >= mu2`.
pub fn check_difference_bounds(p: &ModelParams) -> Check {
    let table = solve_optimal(p, m_cover(p) + 2);
    let v = |s: State| table.value(&s).unwrap();
    let (h0, h1, h2) = (p.h0, p.h1, p.h2);
    let cp = p.cp as f64;
    let cheaper = (h1 / p.mu1).min(h2 / p.mu2);
    let faster = (1.0 / p.mu1).min(1.0 / p.mu2);

    for j in 0..p.cp {
        for k in 0..p.cp - j {
            for l in 0..p.cp - j - k {
                let base = v(State::new(0, j, k, l));
                let more_solo = v(State::new(0, j, k + 1, l)) - base;
                prop_assert!(
                    more_solo >= h1 / p.mu1 - slack(base),
                    "(1) solo at {j},{k},{l}"
                );
                let more_joint = v(State::new(0, j, k, l + 1)) - base;
                prop_assert!(
                    more_joint >= h2 / p.mu2 - slack(base),
                    "(1) joint at {j},{k},{l}"
                );
                let more_triage = v(State::new(0, j + 1, k, l)) - base;
                prop_assert!(
                    more_triage >= h0 / p.mu0 + cheaper - slack(base),
                    "(1) triage at {j},{k},{l}"
                );
            }
        }
    }

    for i in 0..I_COVER {
        for j in 0..=p.cp {
            for k in 0..=p.cp - j {
                let l = p.cp - j - k;
                let s = State::new(i, j, k, l);
                let here = v(s);
                let bound = cheaper
                    + (i + j + 1) as f64 * h0 / (cp * p.mu0)
                    + (i + 1) as f64 * h0 / cp * faster;
                let up = v(State::new(i + 1, j, k, l)) - here;
                prop_assert!(up >= bound - slack(here), "(2) at {s}: {up} < {bound}");
                if j >= 1 {
                    let solo = v(State::new(i + 1, j - 1, k + 1, l)) - here;
                    let joint = v(State::new(i + 1, j - 1, k, l + 1)) - here;
                    prop_assert!(solo >= cheaper - slack(here), "(3) solo at {s}");
                    prop_assert!(joint >= cheaper - slack(here), "(3) joint at {s}");
                }
            }
        }
    }

    if p.mu1 >= p.mu2 {
        for s in decision_states(p, I_COVER) {
            let d = value_difference(&table, &s).unwrap();
            prop_assert!(d <= h1 / p.mu1 - h2 / p.mu2 + slack(d), "(4) at {s}: {d}");
        }
    }
    Ok(())
}

/// Cheaper, at least as fast collaboration with a free physician is strictly
/// preferred.
pub fn check_collab_strictly_better(p: &ModelParams) -> Check {
    let table = solve_optimal(p, m_cover(p));
    for s in decision_states(p, I_COVER)
        .into_iter()
        .filter(|s| s.l < p.cg)
    {
        let d = value_difference(&table, &s).unwrap();
        prop_assert!(d > 0.0, "D{s} = {d}");
        prop_assert_eq!(table.action(&s).unwrap(), Action::Collab);
    }
    Ok(())
}

/// Returns how many states met the non-collaborative conditions.
pub fn check_noncollab_conditions(p: &ModelParams) -> std::result::Result<usize, TestCaseError> {
    let table = solve_optimal(p, m_cover(p));
    let cg = p.cg as f64;
    let mut hits = 0;
    for s in decision_states(p, I_COVER) {
        let applies = if s.l >= p.cg {
            let share = (s.l + 1) as f64 / cg;
            p.h1 / p.mu1 <= share * p.h2 / p.mu2 && 1.0 / p.mu1 <= share / p.mu2
        } else {
            p.h1 / p.mu1 <= p.h2 / p.mu2 && p.mu1 >= p.mu2
        };
        if applies {
            hits += 1;
            let d = value_difference(&table, &s).unwrap();
            prop_assert!(d <= slack(d), "D{s} = {d}");
        }
    }
    Ok(hits)
}

pub fn check_enough_physicians(collab: bool, p: &ModelParams) -> Check {
    let table = solve_optimal(p, m_cover(p));
    let expected = Action::from_bool(collab);
    for s in decision_states(p, I_COVER) {
        prop_assert_eq!(table.action(&s).unwrap(), expected, "at {}", s);
    }
    Ok(())
}

pub fn check_scaling(p: &ModelParams, factor: f64) -> Check {
    let m = m_cover(p);
    let base = solve_optimal(p, m);
    let costly = solve_optimal(&p.with_costs_scaled(factor), m);
    let quick = solve_optimal(&p.with_rates_scaled(factor), m);
    let exact = factor.log2().fract() == 0.0;
    for (s, v, a) in base.entries() {
        prop_assert!(
            close(costly.value(&s).unwrap(), factor * v, 1e-12),
            "cost scaling at {s}"
        );
        prop_assert!(
            close(quick.value(&s).unwrap(), v / factor, 1e-12),
            "time scaling at {s}"
        );
        if let Some(a) = a {
            // Away from exact powers of two, rounding may flip near-ties.
            let d = value_difference(&base, &s).unwrap();
            if exact || d.abs() > 1e-9 * v.max(1.0) {
                prop_assert_eq!(costly.action(&s).unwrap(), a, "cost action at {}", s);
                prop_assert_eq!(quick.action(&s).unwrap(), a, "time action at {}", s);
            }
        }
    }
    Ok(())
}

pub fn check_solo_tail(p: &ModelParams) -> Check {
    for j in 1..=p.cp {
        for k in 0..=p.cp - j {
            let report = find_threshold(p, j, k, p.cp - j - k, 200).unwrap();
            prop_assert_eq!(
                report.stabilized,
                Stabilization::Stable(Action::NonCollab),
                "row ({},{},{}) switches at {:?}",
                j,
                k,
                p.cp - j - k,
                report.sign_changes
            );
        }
    }
    Ok(())
}

// ---- heuristic properties ----

pub fn check_rule_equivalence(p: &ModelParams) -> Check {
    for k in 0..p.cp {
        for l in 0..p.cp - k {
            let rule = heuristics::threshold_form(p, k, l).unwrap();
            let j = p.cp - k - l;
            for i in 0..=500 {
                let s = State::new(i, j, k, l);
                let lin = heuristics::action_h_lin(p, &s).unwrap();
                prop_assert_eq!(rule.action(i), lin, "rule {:?} at {}", rule.kind, s);
            }
        }
    }
    Ok(())
}

pub fn check_linear_identity(p: &ModelParams) -> Check {
    for k in 0..p.cp {
        for l in p.cg..p.cp - k {
            let consts = heuristics::constants(p, k, l).unwrap();
            if consts.degenerate() {
                continue;
            }
            let rule = heuristics::threshold_form(p, k, l).unwrap();
            let (c, b) = (rule.c_tilde.unwrap(), rule.b_tilde.unwrap());
            for i in 1..=500 {
                let s = State::new(i, p.cp - k - l, k, l);
                let h = heuristics::h_linear(p, &s).unwrap();
                let line = i as f64 * c + b;
                let scale = (i as f64 * c).abs() + b.abs();
                prop_assert!(
                    (h - line).abs() <= 1e-12 * scale.max(1.0),
                    "{s}: {h} vs {line}"
                );
            }
        }
    }
    Ok(())
}

pub fn check_base_agreement(p: &ModelParams) -> Check {
    for s in decision_states(p, 0) {
        prop_assert_eq!(
            heuristics::action_h(p, &s).unwrap(),
            heuristics::action_h_lin(p, &s).unwrap(),
            "at {}",
            s
        );
    }
    Ok(())
}

/// Both heuristics agree with the optimal policy wherever the structural
/// results pin the optimal action.
pub fn check_heuristic_signs(p: &ModelParams) -> Check {
    let cg = p.cg as f64;
    let solo_cheap = p.h1 / p.mu1 <= p.h2 / p.mu2;
    let collab_cheap = p.h1 / p.mu1 > p.h2 / p.mu2;
    let table = solve_optimal(p, m_cover(p));
    for s in decision_states(p, I_COVER) {
        let pinned = if s.l >= p.cg {
            let share = (s.l + 1) as f64 / cg;
            (p.h1 / p.mu1 <= share * p.h2 / p.mu2 && 1.0 / p.mu1 <= share / p.mu2)
                .then_some(Action::NonCollab)
        } else if solo_cheap && p.mu1 >= p.mu2 {
            Some(Action::NonCollab)
        } else if collab_cheap && p.mu2 >= p.mu1 {
            Some(Action::Collab)
        } else {
            None
        };
        if let Some(a) = pinned {
            prop_assert_eq!(heuristics::action_h(p, &s).unwrap(), a, "H at {}", s);
            prop_assert_eq!(
                heuristics::action_h_lin(p, &s).unwrap(),
                a,
                "H_Lin at {}",
                s
            );
            if a == Action::Collab {
                prop_assert_eq!(table.action(&s).unwrap(), a, "optimal at {}", s);
            }
        }
    }
    Ok(())
}

pub fn check_oracle(p: &ModelParams, mode: OracleMode) -> Check {
    for k in 0..p.cp {
        for l in 0..p.cp - k {
            if mode == OracleMode::InitialBlock && l < p.cg {
                continue;
            }
            for i in 0..=200 {
                let s = State::new(i, p.cp - k - l, k, l);
                let traced = heuristics::deterministic_area_oracle(p, &s, mode).unwrap();
                let closed = heuristics::upstream_difference(p, &s, mode).unwrap();
                prop_assert!(
                    (traced - closed).abs() <= 1e-9 * closed.abs().max(1.0),
                    "{s} {mode:?}: traced {traced} vs closed {closed}"
                );
            }
        }
    }
    Ok(())
}

/// Very slow triage recovers the slow-triage estimate, very fast triage the
/// fast-triage one. The blend weight at the extremes is within about 1e-4 of
/// 0 or 1, which bounds the residual mix.
pub fn check_blend_limits(p: &ModelParams) -> Check {
    let mut slow = *p;
    slow.mu0 = 1e-6;
    let mut fast = *p;
    fast.mu0 = 1e6;
    for k in 0..p.cp {
        for l in 0..p.cp - k {
            if heuristics::constants(p, k, l).unwrap().degenerate() {
                continue;
            }
            for i in 1..=40 {
                let s = State::new(i, p.cp - k - l, k, l);
                let h = heuristics::h_piecewise(&slow, &s).unwrap();
                let h0 = heuristics::h_zero(&slow, &s).unwrap();
                if l < p.cg {
                    prop_assert_eq!(h, h0, "slow {}", s);
                    continue;
                }
                let hinf = heuristics::h_infinity(&slow, &s).unwrap();
                let tol = 1e-3 * (h0.abs() + hinf.abs()).max(1.0);
                prop_assert!((h - h0).abs() <= tol, "slow {s}: {h} vs {h0}");
                let h = heuristics::h_piecewise(&fast, &s).unwrap();
                prop_assert!((h - hinf).abs() <= tol, "fast {s}: {h} vs {hinf}");
            }
        }
    }
    Ok(())
}
