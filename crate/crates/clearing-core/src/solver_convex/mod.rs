//! Equilibrium as the minimizer of a convex program over prices and per-half trade volumes.

mod descent;
mod polish;
mod program;
mod rational;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use program::{Program, ProgramHalf, ProgramState};
pub use rational::{extract_rational, extract_rational_from_state, rational_from_json, rational_json, to_f64, RationalSolution};

use crate::cfmm::CfmmError;
use crate::density::DensityError;
use crate::market_core::{BatchInstance, BatchSolution, PriceVector};
use crate::verifier::verify_solution;

/// Tolerance the convex solver's solutions are verified at.
pub const CONVEX_VERIFY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvexError {
    #[error("participant {participant} unsupported: {reason}")]
    UnsupportedParticipant { participant: usize, reason: String },
    #[error("no state within tolerance; best objective {objective:e}")]
    NotConverged { best: Box<BatchSolution>, objective: f64 },
    #[error("infeasible state: {0}")]
    InfeasibleState(String),
    #[error("no rational equilibrium: {0}")]
    NotRational(String),
    #[error("active set does not close: {0}")]
    ActiveSetError(String),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Cfmm(#[from] CfmmError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Leading constant of the `c / sqrt(t)` step schedule.
    pub step_c: f64,
    /// Largest accepted objective at the returned state.
    pub tol: f64,
    /// Largest accepted clearing residual of the Newton polish, relative to scale.
    pub projection_tol: f64,
    pub newton_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iters: 200, step_c: 0.1, tol: 1e-8, projection_tol: 1e-10, newton_iters: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

/// A solve together with its per-iteration trace and load notices.
#[derive(Debug, Clone)]
pub struct ConvexRun {
    pub solution: BatchSolution,
    pub state: ProgramState,
    pub diagnostics: Vec<DiagRow>,
    pub notices: Vec<String>,
}

/// Objective of the program built from `inst` at `state`.
pub fn objective(inst: &BatchInstance, state: &ProgramState) -> Result<f64, ConvexError> {
    Program::from_instance(inst)?.objective(state)
}

/// Gradient in prices and volumes of the program built from `inst` at `state`.
pub fn gradient(inst: &BatchInstance, state: &ProgramState) -> Result<(Vec<f64>, Vec<f64>), ConvexError> {
    Program::from_instance(inst)?.gradient(state)
}

pub fn solve_convex(inst: &BatchInstance, opts: &SolveOptions) -> Result<BatchSolution, ConvexError> {
    solve_convex_traced(inst, opts).map(|r| r.solution)
}

fn normalized_state(prog: &Program, p: &[f64], y: &[f64]) -> ProgramState {
    let m = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let p: Vec<f64> = p.iter().map(|v| v / m).collect();
    let y: Vec<f64> = y.iter().map(|v| v / m).collect();
    let y = prog.project_volumes(&p, &y);
    ProgramState { p, y }
}

fn to_solution(inst: &BatchInstance, prog: &Program, s: &ProgramState, objective: f64, iterations: usize) -> BatchSolution {
    let n = prog.n;
    let mut trades = vec![vec![0.0; n]; inst.participants.len()];
    for (i, h) in prog.halves.iter().enumerate() {
        trades[h.owner][h.sell] -= s.y[i] / s.p[h.sell];
        trades[h.owner][h.buy] += s.y[i] / s.p[h.buy];
    }
    let prices = PriceVector::new(s.p.clone()).expect("solver prices are positive");
    let mut sol = BatchSolution { prices, trades, objective_value: Some(objective), iterations, solver: "convex".into(), verifier_report: Vec::new() };
    if let Ok(report) = verify_solution(inst, &sol, CONVEX_VERIFY_TOL) {
        sol.verifier_report = report.checks;
    }
    sol
}

pub fn solve_convex_traced(inst: &BatchInstance, opts: &SolveOptions) -> Result<ConvexRun, ConvexError> {
    let prog = Program::from_instance(inst)?;
    let n = prog.n;
    let mut diagnostics = Vec::new();
    if prog.halves.is_empty() {
        let state = ProgramState { p: vec![1.0; n], y: Vec::new() };
        let solution = to_solution(inst, &prog, &state, 0.0, 0);
        return Ok(ConvexRun { solution, state, diagnostics, notices: prog.notices.clone() });
    }
    let start = ProgramState { p: vec![1.0; n], y: vec![0.0; prog.halves.len()] };
    let (coarse, mut iterations) = descent::descend(&prog, start, opts, &mut diagnostics);

    let mut starts: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let coarse_amounts: Vec<f64> = prog.halves.iter().enumerate().map(|(i, h)| coarse.y[i] / coarse.p[h.sell]).collect();
    starts.push((coarse.p.clone(), coarse_amounts));
    if let Some(s) = polish::Polish::new(&prog).smoothed_start(&coarse.p) {
        starts.push(s);
    }
    let ones = vec![1.0; n];
    starts.push((ones.clone(), response_amounts(&prog, &ones)));
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    for _ in 0..6 {
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0f64..2.0).exp()).collect();
        let x = response_amounts(&prog, &p);
        starts.push((p, x));
    }

    let mut best: Option<(f64, ProgramState)> = None;
    for (p0, x0) in starts {
        let polished = polish::Polish::new(&prog).run(&p0, &x0, opts.newton_iters);
        iterations += polished.iterations;
        if polished.p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            continue;
        }
        let y: Vec<f64> = prog.halves.iter().enumerate().map(|(i, h)| polished.p[h.sell] * polished.amounts[i]).collect();
        let state = normalized_state(&prog, &polished.p, &y);
        if prog.infeasibility(&state) > 1e-9 {
            continue;
        }
        let obj = prog.objective_value(&state);
        if !obj.is_finite() {
            continue;
        }
        let better = best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true);
        if better {
            best = Some((obj, state));
        }
        if polished.residual <= opts.projection_tol && obj <= opts.tol {
            break;
        }
    }
    let fallback = normalized_state(&prog, &coarse.p, &coarse.y);
    let (obj, state) = best.unwrap_or_else(|| (prog.objective_value(&fallback), fallback));
    diagnostics.push(DiagRow { iter: iterations, objective: obj, grad_norm: f64::NAN });
    let solution = to_solution(inst, &prog, &state, obj, iterations);
    if obj <= opts.tol {
        Ok(ConvexRun { solution, state, diagnostics, notices: prog.notices.clone() })
    } else {
        Err(ConvexError::NotConverged { best: Box::new(solution), objective: obj })
    }
}

fn response_amounts(prog: &Program, p: &[f64]) -> Vec<f64> {
    prog.halves.iter().enumerate().map(|(i, h)| h.density.cumulative(prog.rate(i, p))).collect()
}
