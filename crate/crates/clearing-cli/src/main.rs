use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use clearing_core::analysis::{budget_invariance_probe, family_identity_check, rule_demand, wgs_probe, DEFAULT_SAMPLES};
use clearing_core::density::density_rows;
use clearing_core::io::{parse_instance, parse_sequence, parse_solution, solution_to_json, IoError};
use clearing_core::sequencer::run_sequence_with;
use clearing_core::solver::{resolve, solve, SolveError, SolverKind};
use clearing_core::solver_convex::{extract_rational, extract_rational_from_state, solve_convex_traced, SolveOptions, CONVEX_VERIFY_TOL};
use clearing_core::solver_reference::{excess_interval, REFERENCE_VERIFY_TOL};
use clearing_core::solver_tatonnement::{solve_tatonnement_traced, TatonnementOptions, TATONNEMENT_VERIFY_TOL};
use clearing_core::{density_from_function, demand_response, validate_instance, verify_solution, BatchInstance, BatchSolution, Participant};

#[derive(Parser)]
#[command(name = "clearing", version, about = "Batch clearing of limit orders and CFMMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and print the solution as JSON.
    Solve {
        instance: PathBuf,
        #[arg(long, default_value = "auto")]
        solver: SolverKind,
        #[arg(long)]
        tol: Option<f64>,
        /// Per-iteration diagnostics CSV.
        #[arg(long)]
        diag: Option<PathBuf>,
        /// Also report exact rational prices and trades.
        #[arg(long)]
        rational: bool,
    },
    /// Check a solution against an instance.
    Verify {
        instance: PathBuf,
        solution: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Write the trade density of one CFMM as CSV.
    Density {
        instance: PathBuf,
        #[arg(long)]
        cfmm: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        half: Half,
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Run a JSON array of batches in order.
    Sequence {
        sequence: PathBuf,
        /// Leave collected fees in CFMM reserves.
        #[arg(long)]
        fee_deposit: bool,
        #[arg(long, default_value = "auto")]
        solver: SolverKind,
        /// Per-batch clearing prices CSV.
        #[arg(long)]
        rates: Option<PathBuf>,
    },
    /// Run property probes on the CFMMs of an instance.
    Analyze {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "wgs")]
        probe: Probe,
        #[arg(long)]
        cfmm: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Half {
    Forward,
    Reverse,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Probe {
    Wgs,
    Budget,
    RuleFamily,
}

/// Failures that end the run, with their exit codes.
enum Failure {
    Input(String),
    Verification(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_instance(path: &Path) -> Result<BatchInstance, Failure> {
    let inst = parse_instance(&read(path)?)?;
    let problems = validate_instance(&inst);
    if problems.is_empty() {
        Ok(inst)
    } else {
        Err(Failure::Input(problems.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")))
    }
}

fn print_json(v: &Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("values serialize")));
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn solve_error(e: SolveError) -> Failure {
    match e {
        SolveError::Invalid(m) => Failure::Input(m),
        SolveError::Convex(clearing_core::ConvexError::UnsupportedParticipant { .. })
        | SolveError::Tatonnement(clearing_core::TatonnementError::UnsupportedParticipant { .. })
        | SolveError::Reference(clearing_core::ReferenceError::WrongArity(_)) => Failure::Input(e.to_string()),
        other => Failure::Verification(other.to_string()),
    }
}

/// Prints the best iterate of a solver that gave up, then classifies the error.
fn unsolved(inst: &BatchInstance, e: SolveError) -> Failure {
    if let Some(best) = e.best() {
        print_json(&solution_to_json(inst, best, None));
    }
    solve_error(e)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn tolerance_for(solver: &str) -> f64 {
    match solver {
        "tatonnement" => TATONNEMENT_VERIFY_TOL,
        "reference" => REFERENCE_VERIFY_TOL,
        _ => CONVEX_VERIFY_TOL,
    }
}

fn report_failures(sol: &BatchSolution) -> Vec<String> {
    sol.verifier_report.iter().filter(|c| !c.passed).map(|c| format!("{} (residual {:e}): {}", c.name, c.residual, c.detail)).collect()
}

fn cmd_solve(path: &Path, kind: SolverKind, tol: Option<f64>, diag: Option<&Path>, rational: bool) -> Result<(), Failure> {
    let inst = load_instance(path)?;
    let kind = resolve(&inst, kind);
    let mut state = None;
    let sol = match (kind, diag) {
        (SolverKind::Convex, _) => {
            let mut opts = SolveOptions { tol: tol.unwrap_or(inst.options.tol), ..SolveOptions::default() };
            if let Some(m) = inst.options.max_iters {
                opts.max_iters = m;
            }
            let run = solve_convex_traced(&inst, &opts).map_err(|e| unsolved(&inst, e.into()))?;
            if let Some(d) = diag {
                let rows = run.diagnostics.iter().map(|r| vec![r.iter.to_string(), r.objective.to_string(), r.grad_norm.to_string()]);
                write_csv(d, &["iter", "objective", "grad_norm"], rows)?;
            }
            state = Some(run.state);
            run.solution
        }
        (SolverKind::Tatonnement, Some(d)) => {
            let mut opts = TatonnementOptions::default();
            if let Some(t) = tol {
                opts.tol = t;
            }
            let (sol, trace) = solve_tatonnement_traced(&inst, &opts).map_err(|e| unsolved(&inst, e.into()))?;
            let rows = trace.iter().map(|r| vec![r.iter.to_string(), r.residual.to_string(), r.step.to_string()]);
            write_csv(d, &["iter", "residual", "step"], rows)?;
            sol
        }
        (kind, diag) => {
            let sol = solve(&inst, kind, tol).map_err(|e| unsolved(&inst, e))?;
            if let Some(d) = diag {
                let rho = sol.prices.values()[0] / sol.prices.values()[1];
                let mut rows = Vec::new();
                for k in 0..=200 {
                    let r = rho * 4f64.powf(k as f64 / 100.0 - 1.0);
                    let (lo, hi) = excess_interval(&inst, r).map_err(|e| solve_error(e.into()))?;
                    rows.push(vec![r.to_string(), lo.to_string(), hi.to_string()]);
                }
                write_csv(d, &["rate", "excess_lo", "excess_hi"], rows)?;
            }
            sol
        }
    };
    let mut out = solution_to_json(&inst, &sol, None);
    let mut failure = None;
    if rational {
        let exact = match &state {
            Some(s) => extract_rational_from_state(&inst, s),
            None => extract_rational(&inst, sol.prices.values()),
        };
        match exact {
            Ok(r) => out = solution_to_json(&inst, &sol, Some(&r)),
            Err(e) => {
                out["rational"] = Value::Null;
                out["rational_error"] = json!(e.to_string());
                failure = Some(format!("no exact solution: {e}"));
            }
        }
    }
    print_json(&out);
    let bad = report_failures(&sol);
    if !bad.is_empty() {
        return Err(Failure::Verification(bad.join("; ")));
    }
    failure.map_or(Ok(()), |m| Err(Failure::Verification(m)))
}

fn cmd_verify(inst_path: &Path, sol_path: &Path, tol: Option<f64>) -> Result<(), Failure> {
    let inst = load_instance(inst_path)?;
    let sol = parse_solution(&inst, &read(sol_path)?)?;
    let tol = tol.unwrap_or_else(|| tolerance_for(&sol.solver));
    let report = verify_solution(&inst, &sol, tol).map_err(|e| Failure::Input(e.to_string()))?;
    let mut table = format!("{:<22} {:<6} {:<10} {:>12}  detail\n", "check", "result", "applies", "residual");
    for c in &report.checks {
        let result = if c.passed { "pass" } else { "FAIL" };
        table.push_str(&format!("{:<22} {:<6} {:<10} {:>12.3e}  {}\n", c.name, result, c.applicable, c.residual, c.detail));
    }
    emit(&table);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("failed checks: {}", report.failed().join(", "))))
    }
}

fn find_cfmm<'a>(inst: &'a BatchInstance, id: &str) -> Result<&'a clearing_core::CfmmDecl, Failure> {
    inst.participants
        .iter()
        .find_map(|p| match p {
            Participant::Cfmm(c) if c.id == id => Some(c),
            _ => None,
        })
        .ok_or_else(|| Failure::Input(format!("no CFMM with id {id}")))
}

fn cmd_density(path: &Path, id: &str, out: &Path, half: Half, points: usize) -> Result<(), Failure> {
    let inst = load_instance(path)?;
    let c = find_cfmm(&inst, id)?;
    let f = c.effective_function().map_err(|e| Failure::Input(e.to_string()))?;
    let pair = density_from_function(&f, &c.reserves).map_err(|e| Failure::Input(e.to_string()))?;
    let mut rows = Vec::new();
    let halves = match half {
        Half::Forward => vec![("forward", &pair.forward)],
        Half::Reverse => vec![("reverse", &pair.reverse)],
        Half::Both => vec![("forward", &pair.forward), ("reverse", &pair.reverse)],
    };
    for (name, h) in halves {
        for (rate, d, m) in density_rows(h, points) {
            rows.push(vec![name.to_string(), rate.to_string(), d.to_string(), m.to_string()]);
        }
    }
    write_csv(out, &["direction", "rate", "cumulative", "marginal"], rows)
}

fn cmd_sequence(path: &Path, fee_deposit: bool, solver: SolverKind, rates: Option<&Path>) -> Result<(), Failure> {
    let batches = parse_sequence(&read(path)?)?;
    let outcome = run_sequence_with(&batches, fee_deposit, solver).map_err(|e| match e {
        clearing_core::SequenceError::Solve { source, batch } => match solve_error(source) {
            Failure::Input(m) => Failure::Input(format!("batch {batch}: {m}")),
            Failure::Verification(m) => Failure::Verification(format!("batch {batch}: {m}")),
        },
        other => Failure::Input(other.to_string()),
    })?;
    let assets = batches.first().map(|b| b.assets.clone()).unwrap_or_default();
    let per_asset = |v: &[f64]| Value::Object(assets.iter().cloned().zip(v.iter().map(|x| json!(x))).collect());
    let out: Vec<Value> = outcome
        .batches
        .iter()
        .map(|b| {
            let mut v = solution_to_json(&b.instance, &b.solution, None);
            v["reserves_after"] = Value::Object(b.reserves_after.iter().map(|(id, r)| (id.clone(), json!(r))).collect());
            v
        })
        .collect();
    print_json(&json!({
        "batches": out,
        "fee_sink": per_asset(&outcome.fee_sink),
        "conservation_residual": per_asset(&outcome.conservation_residual()),
    }));
    if let Some(p) = rates {
        let mut header = vec!["batch"];
        header.extend(assets.iter().map(String::as_str));
        let rows = outcome.batches.iter().enumerate().map(|(t, b)| {
            std::iter::once(t.to_string()).chain(b.solution.prices.values().iter().map(|v| v.to_string())).collect()
        });
        write_csv(p, &header, rows)?;
    }
    if outcome.all_verified() {
        Ok(())
    } else {
        Err(Failure::Verification("a batch failed verification".into()))
    }
}

fn cmd_analyze(path: &Path, probe: Probe, only: Option<&str>, samples: usize) -> Result<(), Failure> {
    let inst = load_instance(path)?;
    let cfmms: Vec<&clearing_core::CfmmDecl> = match only {
        Some(id) => vec![find_cfmm(&inst, id)?],
        None => inst.participants.iter().filter_map(|p| if let Participant::Cfmm(c) = p { Some(c) } else { None }).collect(),
    };
    let input = |e: clearing_core::AnalysisError| Failure::Input(e.to_string());
    let mut verdicts = Vec::new();
    match probe {
        Probe::Wgs | Probe::Budget => {
            for c in cfmms {
                let outcome = match probe {
                    Probe::Wgs => wgs_probe(&c.function, &c.reserves, samples),
                    _ => budget_invariance_probe(&c.function, samples),
                }
                .map_err(input)?;
                verdicts.push(json!({ "cfmm": c.id, "passed": outcome.passed(), "outcome": outcome }));
            }
        }
        Probe::RuleFamily => {
            let report = family_identity_check(samples).map_err(input)?;
            verdicts.push(json!({ "check": "family_identities", "passed": report.passed(), "report": report }));
            let n = inst.n_assets();
            let prices: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
            for c in cfmms {
                let local = c.local_prices(&prices);
                let by_rule = rule_demand(&c.function, &c.reserves, &local, 1.0).map_err(input)?;
                let direct = demand_response(&c.function, &c.reserves, &local).map_err(|e| Failure::Input(e.to_string()))?.delta;
                verdicts.push(json!({ "cfmm": c.id, "check": "axiom_rule_matches_demand", "passed": by_rule == direct, "rule": by_rule, "demand": direct }));
            }
        }
    }
    print_json(&Value::Array(verdicts));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { instance, solver, tol, diag, rational } => cmd_solve(instance, *solver, *tol, diag.as_deref(), *rational),
        Command::Verify { instance, solution, tol } => cmd_verify(instance, solution, *tol),
        Command::Density { instance, cfmm, out, half, points } => cmd_density(instance, cfmm, out, *half, *points),
        Command::Sequence { sequence, fee_deposit, solver, rates } => cmd_sequence(sequence, *fee_deposit, *solver, rates.as_deref()),
        Command::Analyze { instance, probe, cfmm, samples } => cmd_analyze(instance, *probe, cfmm.as_deref(), *samples),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
