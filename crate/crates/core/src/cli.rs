//! The `clearq` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 when the input is
//! well-formed but unusable (infeasible state, unknown policy, bad JSON).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::experiments::{
    aggregate, build_grid, initial_states, render_tables, run_sweep, write_blocks_csv,
    write_records_csv, BlockStats, SweepConfig, SweepRecord,
};
use crate::heuristics::{self, HeuristicConstants, ThresholdRule};
use crate::model::{check_decision, Action, ModelParams, State};
use crate::policies::PolicySpec;
use crate::simulator::{simulate_many, SimResult};
use crate::solver::{evaluate_policy, solve_from, solve_optimal, value_difference};

#[derive(Debug, Parser)]
#[command(
    name = "clearq",
    version,
    about = "Collaborative-care clearing queue toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal value table for every state reachable from `--state`.
    Solve {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        state: State,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Exact and heuristic advice at one decision state.
    Advise {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        state: State,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Expected cost of a policy and its gap to the optimum.
    Eval {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        state: State,
        /// pi1 | pi2[:T] | pi3 | pi4 | heur | heur-lin | optimal | custom:<file>
        #[arg(long)]
        policy: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Full benchmark sweep: per-state records and block statistics.
    Sweep {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Also write block statistics as CSV to this file.
        #[arg(long)]
        blocks: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte Carlo estimate of a policy's expected cost.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        state: State,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 10_000)]
        replications: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// The two relative-error tables (one per service-rate regime).
    Tables {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Model parameters from a JSON file, with individual flags taking precedence.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cp: Option<u32>,
    #[arg(long)]
    pub cg: Option<u32>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    #[arg(long)]
    pub h0: Option<f64>,
    #[arg(long)]
    pub h1: Option<f64>,
    #[arg(long)]
    pub h2: Option<f64>,
}

impl ParamArgs {
    pub fn resolve(&self) -> Result<ModelParams> {
        let mut fields = match &self.config {
            Some(path) => match serde_json::from_str(&std::fs::read_to_string(path)?)? {
                Value::Object(map) => map,
                _ => return Err(Error::InvalidParams("config must be a JSON object".into())),
            },
            None => Map::new(),
        };
        let ints = [("cp", self.cp), ("cg", self.cg)];
        for (key, value) in ints {
            if let Some(v) = value {
                fields.insert(key.into(), v.into());
            }
        }
        let reals = [
            ("mu0", self.mu0),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("h0", self.h0),
            ("h1", self.h1),
            ("h2", self.h2),
        ];
        for (key, value) in reals {
            if let Some(v) = value {
                fields.insert(key.into(), v.into());
            }
        }
        let params: ModelParams = serde_json::from_value(Value::Object(fields))?;
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SweepSource {
    /// Sweep configuration JSON; missing fields take the default grid.
    #[arg(long = "config")]
    pub config: Option<PathBuf>,
    /// Use the default benchmark grid.
    #[arg(long)]
    pub defaults: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SweepSource,
    /// Worker threads; 0 picks one per core.
    #[arg(long, env = "CLEARQ_JOBS", default_value_t = 0)]
    pub jobs: usize,
}

impl SweepArgs {
    pub fn config(&self) -> Result<SweepConfig> {
        match &self.source.config {
            Some(path) => Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?),
            None => Ok(SweepConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Advice {
    pub state: State,
    pub value_difference: f64,
    pub optimal_action: Action,
    pub h: f64,
    pub h_lin: f64,
    pub action_h: Action,
    pub action_h_lin: Action,
    pub constants: HeuristicConstants,
    pub threshold_rule: ThresholdRule,
}

pub fn advise(params: &ModelParams, state: &State) -> Result<Advice> {
    check_decision(params, state)?;
    let table = solve_optimal(params, state.level());
    Ok(Advice {
        state: *state,
        value_difference: value_difference(&table, state)?,
        optimal_action: table.action(state)?,
        h: heuristics::h_piecewise(params, state)?,
        h_lin: heuristics::h_linear(params, state)?,
        action_h: heuristics::action_h(params, state)?,
        action_h_lin: heuristics::action_h_lin(params, state)?,
        constants: heuristics::constants(params, state.k, state.l)?,
        threshold_rule: heuristics::threshold_form(params, state.k, state.l)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub state: State,
    pub policy: String,
    pub v_pi: f64,
    pub v_opt: f64,
    pub err_pct: f64,
}

pub fn evaluate(params: &ModelParams, spec: &PolicySpec, state: &State) -> Result<Evaluation> {
    if !state.is_feasible(params) {
        return Err(Error::InfeasibleState(*state));
    }
    let v_pi = evaluate_policy(params, spec, state.level())?.value(state)?;
    let v_opt = solve_optimal(params, state.level()).value(state)?;
    let err_pct = if v_opt == 0.0 {
        0.0
    } else {
        100.0 * (v_pi - v_opt) / v_opt
    };
    Ok(Evaluation {
        state: *state,
        policy: spec.label(),
        v_pi,
        v_opt,
        err_pct,
    })
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    records: &'a [SweepRecord],
    blocks: &'a [BlockStats],
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Diagnostics go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let rendered = err.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(err) => {
            let _ = writeln!(stderr, "error: {err}");
            exit_code(&err)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::Sweep { source, .. } => exit_code(source),
        _ => 2,
    }
}

fn sink<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(stdout),
    })
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Solve {
            params,
            state,
            output,
        } => {
            let params = params.resolve()?;
            if !state.is_feasible(&params) {
                return Err(Error::InfeasibleState(state));
            }
            let table = solve_from(&params, &state);
            let mut out = sink(&output.output, stdout)?;
            match output.format.unwrap_or(Format::Json) {
                Format::Json => write_json(&mut out, &table)?,
                Format::Csv => {
                    writeln!(out, "i,j,k,l,value,action")?;
                    for (s, v, a) in table.entries() {
                        let a = a.map(|a| a.as_u8().to_string()).unwrap_or_default();
                        writeln!(out, "{},{},{},{},{v},{a}", s.i, s.j, s.k, s.l)?;
                    }
                }
                Format::Text => {
                    writeln!(out, "state   {state}")?;
                    writeln!(out, "value   {}", table.value(&state)?)?;
                    if state.j >= 1 {
                        writeln!(out, "action  {}", table.action(&state)?)?;
                    }
                    writeln!(out, "states  {}", table.space().len())?;
                }
            }
            out.flush()?;
        }
        Command::Advise {
            params,
            state,
            output,
        } => {
            let advice = advise(&params.resolve()?, &state)?;
            let mut out = sink(&output.output, stdout)?;
            match output.format.unwrap_or(Format::Json) {
                Format::Json => write_json(&mut out, &advice)?,
                Format::Csv => {
                    writeln!(
                        out,
                        "i,j,k,l,value_difference,optimal_action,h,h_lin,action_h,action_h_lin"
                    )?;
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{}",
                        state.i,
                        state.j,
                        state.k,
                        state.l,
                        advice.value_difference,
                        advice.optimal_action,
                        advice.h,
                        advice.h_lin,
                        advice.action_h,
                        advice.action_h_lin
                    )?;
                }
                Format::Text => {
                    writeln!(out, "state             {state}")?;
                    writeln!(out, "value difference  {:.6}", advice.value_difference)?;
                    writeln!(out, "optimal action    {}", advice.optimal_action)?;
                    writeln!(
                        out,
                        "H                 {:.6} -> {}",
                        advice.h, advice.action_h
                    )?;
                    writeln!(
                        out,
                        "H_Lin             {:.6} -> {}",
                        advice.h_lin, advice.action_h_lin
                    )?;
                    writeln!(out, "rule              {:?}", advice.threshold_rule.kind)?;
                }
            }
            out.flush()?;
        }
        Command::Eval {
            params,
            state,
            policy,
            output,
        } => {
            let params = params.resolve()?;
            let spec: PolicySpec = policy.parse()?;
            let eval = evaluate(&params, &spec, &state)?;
            let mut out = sink(&output.output, stdout)?;
            match output.format.unwrap_or(Format::Json) {
                Format::Json => write_json(&mut out, &eval)?,
                Format::Csv => {
                    writeln!(out, "i,j,k,l,policy,v_pi,v_opt,err_pct")?;
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        state.i,
                        state.j,
                        state.k,
                        state.l,
                        eval.policy,
                        eval.v_pi,
                        eval.v_opt,
                        eval.err_pct
                    )?;
                }
                Format::Text => {
                    writeln!(out, "{} at {state}", eval.policy)?;
                    writeln!(out, "v_pi   {:.6}", eval.v_pi)?;
                    writeln!(out, "v_opt  {:.6}", eval.v_opt)?;
                    writeln!(out, "error  {:.4}%", eval.err_pct)?;
                }
            }
            out.flush()?;
        }
        Command::Sweep {
            sweep,
            blocks,
            output,
        } => {
            let config = sweep.config()?;
            let records = run_sweep(&config, sweep.jobs)?;
            let expected: usize = build_grid(&config).len()
                * config
                    .staffing
                    .iter()
                    .map(|&(cp, _)| initial_states(cp, config.i0).len())
                    .sum::<usize>()
                * config.policies.len();
            assert_eq!(records.len(), expected, "sweep record count");
            let stats = aggregate(&records);
            if let Some(path) = &blocks {
                let mut file = BufWriter::new(File::create(path)?);
                write_blocks_csv(&stats, &mut file)?;
                file.flush()?;
            }
            let mut out = sink(&output.output, stdout)?;
            match output.format.unwrap_or(Format::Csv) {
                Format::Csv => write_records_csv(&records, &mut out)?,
                Format::Json => write_json(
                    &mut out,
                    &SweepOutput {
                        records: &records,
                        blocks: &stats,
                    },
                )?,
                Format::Text => write!(out, "{}", render_tables(&stats))?,
            }
            out.flush()?;
        }
        Command::Simulate {
            params,
            state,
            policy,
            replications,
            seed,
            output,
        } => {
            let params = params.resolve()?;
            let spec: PolicySpec = policy.parse()?;
            let result: SimResult = simulate_many(&params, &spec, &state, replications, seed)?;
            let mut out = sink(&output.output, stdout)?;
            match output.format.unwrap_or(Format::Text) {
                Format::Json => write_json(&mut out, &result)?,
                Format::Csv => {
                    writeln!(out, "replications,seed,mean_cost,std_error")?;
                    writeln!(
                        out,
                        "{},{},{},{}",
                        replications, seed, result.mean_cost, result.std_error
                    )?;
                }
                Format::Text => {
                    if result.std_error_available {
                        writeln!(
                            out,
                            "{:.6} ± {:.6}",
                            result.mean_cost,
                            result.half_width_95()
                        )?;
                    } else {
                        writeln!(
                            out,
                            "{:.6} (single replication, no standard error)",
                            result.mean_cost
                        )?;
                    }
                }
            }
            out.flush()?;
        }
        Command::Tables { sweep, output } => {
            let config = sweep.config()?;
            if !config.enforce_assumption {
                return Err(Error::InvalidParams(
                    "tables require enforce_assumption; use `sweep` for unfiltered grids".into(),
                ));
            }
            let stats = aggregate(&run_sweep(&config, sweep.jobs)?);
            let mut out = sink(&output, stdout)?;
            write!(out, "{}", render_tables(&stats))?;
            out.flush()?;
        }
    }
    Ok(())
}
