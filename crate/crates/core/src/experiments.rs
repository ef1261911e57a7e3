//! Parameter sweep over the benchmark grid, relative errors against the
//! optimal value and the per-block summary tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, State};
use crate::policies::{Policy, PolicySpec};
use crate::solver::{evaluate_bound, solve_optimal};

/// Missing fields in a JSON config fall back to [`SweepConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub staffing: Vec<(u32, u32)>,
    pub h0_list: Vec<f64>,
    pub h2_list: Vec<f64>,
    pub mu0_list: Vec<f64>,
    pub mu2_list: Vec<f64>,
    pub h1: f64,
    pub mu1: f64,
    /// Initial number of waiting patients.
    pub i0: u32,
    pub policies: Vec<PolicySpec>,
    /// Keep only combinations with `h2/mu2 < h1/mu1`.
    pub enforce_assumption: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            staffing: vec![(2, 1), (3, 1), (3, 2), (4, 1), (4, 2), (4, 3)],
            h0_list: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            h2_list: vec![0.1, 0.2, 0.5, 1.0, 1.5],
            mu0_list: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            mu2_list: vec![1.6, 2.0, 3.2, 4.0, 5.0, 8.0, 10.0],
            h1: 1.0,
            mu1: 4.0,
            i0: 20,
            policies: PolicySpec::benchmark_set(),
            enforce_assumption: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combo {
    pub id: usize,
    pub h0: f64,
    pub h2: f64,
    pub mu0: f64,
    pub mu2: f64,
}

/// Cartesian product of `(h0, h2, mu0, mu2)` in that nesting order, ids
/// assigned after filtering.
pub fn build_grid(config: &SweepConfig) -> Vec<Combo> {
    let mut combos = Vec::new();
    for &h0 in &config.h0_list {
        for &h2 in &config.h2_list {
            for &mu0 in &config.mu0_list {
                for &mu2 in &config.mu2_list {
                    if config.enforce_assumption && h2 / mu2 >= config.h1 / config.mu1 {
                        continue;
                    }
                    combos.push(Combo {
                        id: combos.len(),
                        h0,
                        h2,
                        mu0,
                        mu2,
                    });
                }
            }
        }
    }
    combos
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `mu1 >= mu2`, boundary included.
    Mu1GeMu2,
    Mu1LtMu2,
}

impl Regime {
    pub fn of(mu1: f64, mu2: f64) -> Self {
        if mu1 >= mu2 {
            Regime::Mu1GeMu2
        } else {
            Regime::Mu1LtMu2
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::Mu1GeMu2 => "mu1>=mu2",
            Regime::Mu1LtMu2 => "mu1<mu2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub config_id: usize,
    pub cp: u32,
    pub cg: u32,
    pub h0: f64,
    pub h2: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub state: State,
    pub policy: String,
    pub v_opt: f64,
    pub v_pi: f64,
    pub err_pct: f64,
}

impl SweepRecord {
    pub fn regime(&self) -> Regime {
        Regime::of(self.mu1, self.mu2)
    }
}

/// Decision states `(i0, j, k, l)` with `j >= 1` and `j + k + l = cp`, in
/// lexicographic order.
pub fn initial_states(cp: u32, i0: u32) -> Vec<State> {
    let mut out = Vec::new();
    for j in 1..=cp {
        for k in 0..=cp - j {
            out.push(State::new(i0, j, k, cp - j - k));
        }
    }
    out
}

fn run_unit(config: &SweepConfig, combo: &Combo, cp: u32, cg: u32) -> Result<Vec<SweepRecord>> {
    let params = ModelParams::new(
        cp,
        cg,
        [combo.mu0, config.mu1, combo.mu2],
        [combo.h0, config.h1, combo.h2],
    )?;
    let starts = initial_states(cp, config.i0);
    let m_max = starts.iter().map(State::level).max().unwrap_or(0);
    let optimal = Arc::new(solve_optimal(&params, m_max));

    let mut tables = Vec::with_capacity(config.policies.len());
    for spec in &config.policies {
        let policy = match spec {
            PolicySpec::OptimalOracle => Policy::optimal(Arc::clone(&optimal)),
            other => Policy::bind(other.clone(), &params, m_max)?,
        };
        tables.push((spec.label(), evaluate_bound(&params, &policy, m_max)?));
    }

    let mut records = Vec::with_capacity(starts.len() * tables.len());
    for state in &starts {
        let v_opt = optimal.value(state)?;
        for (label, table) in &tables {
            let v_pi = table.value(state)?;
            records.push(SweepRecord {
                config_id: combo.id,
                cp,
                cg,
                h0: combo.h0,
                h2: combo.h2,
                mu0: combo.mu0,
                mu1: config.mu1,
                mu2: combo.mu2,
                state: *state,
                policy: label.clone(),
                v_opt,
                v_pi,
                err_pct: 100.0 * (v_pi - v_opt) / v_opt,
            });
        }
    }
    Ok(records)
}

/// Evaluates every policy at every initial state for every grid point and
/// staffing pair. `jobs = 0` uses rayon's default pool size; output order is
/// (combo, staffing, state, policy) regardless of `jobs`.
pub fn run_sweep(config: &SweepConfig, jobs: usize) -> Result<Vec<SweepRecord>> {
    let combos = build_grid(config);
    let units: Vec<(Combo, (u32, u32))> = combos
        .iter()
        .flat_map(|c| config.staffing.iter().map(move |&s| (*c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let chunks: Vec<Vec<SweepRecord>> = pool.install(|| {
        units
            .par_iter()
            .map(|(combo, (cp, cg))| {
                run_unit(config, combo, *cp, *cg).map_err(|e| Error::Sweep {
                    id: combo.id,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub cp: u32,
    pub cg: u32,
    pub regime: Regime,
    pub policy: String,
    pub count: usize,
    pub max_err: f64,
    pub avg_err: f64,
    /// Population standard deviation.
    pub std_err: f64,
    pub std_err_sample: f64,
}

/// Max, mean and spread of `err_pct` per staffing pair, regime and policy.
/// Blocks are ordered by regime, then staffing and policy in order of first
/// appearance.
pub fn aggregate(records: &[SweepRecord]) -> Vec<BlockStats> {
    type Key = (Regime, u32, u32, String);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: HashMap<Key, Vec<f64>> = HashMap::new();
    for r in records {
        let key = (r.regime(), r.cp, r.cg, r.policy.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r.err_pct);
    }
    let staffing_rank: HashMap<(u32, u32), usize> = {
        let mut seen = HashMap::new();
        for (_, cp, cg, _) in &order {
            let next = seen.len();
            seen.entry((*cp, *cg)).or_insert(next);
        }
        seen
    };
    let mut blocks: Vec<BlockStats> = order
        .into_iter()
        .map(|key| {
            let errs = &groups[&key];
            let n = errs.len() as f64;
            let avg = errs.iter().sum::<f64>() / n;
            let ss = errs.iter().map(|e| (e - avg).powi(2)).sum::<f64>();
            BlockStats {
                cp: key.1,
                cg: key.2,
                regime: key.0,
                policy: key.3,
                count: errs.len(),
                max_err: errs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                avg_err: avg,
                std_err: (ss / n).sqrt(),
                std_err_sample: if errs.len() > 1 {
                    (ss / (n - 1.0)).sqrt()
                } else {
                    0.0
                },
            }
        })
        .collect();
    blocks.sort_by_key(|b| (b.regime, staffing_rank[&(b.cp, b.cg)]));
    blocks
}

pub const RECORD_HEADER: &str = "config_id,cp,cg,h0,h2,mu0,mu2,i,j,k,l,policy,v_opt,v_pi,err_pct";

pub fn write_records_csv<W: Write>(records: &[SweepRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.config_id,
            r.cp,
            r.cg,
            r.h0,
            r.h2,
            r.mu0,
            r.mu2,
            r.state.i,
            r.state.j,
            r.state.k,
            r.state.l,
            r.policy,
            r.v_opt,
            r.v_pi,
            r.err_pct
        )?;
    }
    Ok(())
}

pub const BLOCK_HEADER: &str = "regime,cp,cg,policy,count,max_err,avg_err,std_err,std_err_sample";

pub fn write_blocks_csv<W: Write>(blocks: &[BlockStats], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BLOCK_HEADER}")?;
    for b in blocks {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            b.regime.label(),
            b.cp,
            b.cg,
            b.policy,
            b.count,
            b.max_err,
            b.avg_err,
            b.std_err,
            b.std_err_sample
        )?;
    }
    Ok(())
}

fn display_name(policy: &str) -> String {
    match policy {
        "heur" => "Policy pi'".into(),
        "heur-lin" => "Policy pi'_Lin".into(),
        other => format!("Policy {other}"),
    }
}

/// One table per regime: staffing pairs as columns, three rows (max, avg,
/// std) per policy, percentages to two decimals.
pub fn render_tables(blocks: &[BlockStats]) -> String {
    let mut out = String::new();
    for regime in [Regime::Mu1GeMu2, Regime::Mu1LtMu2] {
        let in_regime: Vec<&BlockStats> = blocks.iter().filter(|b| b.regime == regime).collect();
        if in_regime.is_empty() {
            continue;
        }
        let mut staffing: Vec<(u32, u32)> = Vec::new();
        let mut policies: Vec<&str> = Vec::new();
        for b in &in_regime {
            if !staffing.contains(&(b.cp, b.cg)) {
                staffing.push((b.cp, b.cg));
            }
            if !policies.contains(&b.policy.as_str()) {
                policies.push(&b.policy);
            }
        }
        let _ = writeln!(out, "Relative errors (%) at i0 states, {}", regime.label());
        let _ = write!(out, "{:<16}{:<11}", "", "");
        for (cp, cg) in &staffing {
            let _ = write!(out, "{:>10}", format!("({cp},{cg})"));
        }
        out.push('\n');
        for policy in &policies {
            for (row, pick) in [("Max error", 0), ("Avg error", 1), ("Std error", 2)] {
                let name = if pick == 0 {
                    display_name(policy)
                } else {
                    String::new()
                };
                let _ = write!(out, "{name:<16}{row:<11}");
                for pair in &staffing {
                    let cell = in_regime
                        .iter()
                        .find(|b| (b.cp, b.cg) == *pair && b.policy == *policy)
                        .map(|b| match pick {
                            0 => b.max_err,
                            1 => b.avg_err,
                            _ => b.std_err,
                        });
                    match cell {
                        Some(v) => {
                            let _ = write!(out, "{v:>10.2}");
                        }
                        None => {
                            let _ = write!(out, "{:>10}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        out.push('\n');
    }
    out
}
