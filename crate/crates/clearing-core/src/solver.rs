//! One entry point over the three solvers.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::market_core::{validate_instance, BatchInstance, BatchSolution, Participant};
use crate::solver_convex::{solve_convex, ConvexError, SolveOptions};
use crate::solver_reference::{solve_two_asset, ReferenceError, ReferenceOptions};
use crate::solver_tatonnement::{solve_tatonnement, TatonnementError, TatonnementOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Convex program when every participant fits it, otherwise a demand-query solver.
    #[default]
    Auto,
    Convex,
    Tatonnement,
    Reference,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Auto => "auto",
            SolverKind::Convex => "convex",
            SolverKind::Tatonnement => "tatonnement",
            SolverKind::Reference => "reference",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(SolverKind::Auto),
            "convex" => Ok(SolverKind::Convex),
            "tatonnement" => Ok(SolverKind::Tatonnement),
            "reference" => Ok(SolverKind::Reference),
            other => Err(format!("unknown solver {other}; expected auto, convex, tatonnement or reference")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Tatonnement(#[from] TatonnementError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

impl SolveError {
    /// The best iterate a solver produced before giving up, if any.
    pub fn best(&self) -> Option<&BatchSolution> {
        match self {
            SolveError::Convex(ConvexError::NotConverged { best, .. }) => Some(best),
            SolveError::Tatonnement(TatonnementError::NotConverged { best, .. }) => Some(best),
            _ => None,
        }
    }
}

/// The concrete solver `Auto` resolves to for `inst`.
pub fn resolve(inst: &BatchInstance, kind: SolverKind) -> SolverKind {
    if kind != SolverKind::Auto {
        return kind;
    }
    let buys = inst.participants.iter().any(|p| matches!(p, Participant::LimitBuy(_)));
    let wide = inst.participants.iter().any(|p| matches!(p, Participant::Cfmm(c) if c.assets.len() > 2));
    match (buys || wide, inst.n_assets()) {
        (false, _) => SolverKind::Convex,
        (true, 2) => SolverKind::Reference,
        (true, _) => SolverKind::Tatonnement,
    }
}

/// Validates and solves `inst`; `tol` overrides the instance tolerance.
pub fn solve(inst: &BatchInstance, kind: SolverKind, tol: Option<f64>) -> Result<BatchSolution, SolveError> {
    let problems = validate_instance(inst);
    if !problems.is_empty() {
        let text: Vec<String> = problems.iter().map(|v| v.to_string()).collect();
        return Err(SolveError::Invalid(text.join("; ")));
    }
    let tol = tol.unwrap_or(inst.options.tol);
    match resolve(inst, kind) {
        SolverKind::Convex => {
            let mut opts = SolveOptions { tol, ..SolveOptions::default() };
            if let Some(m) = inst.options.max_iters {
                opts.max_iters = m;
            }
            Ok(solve_convex(inst, &opts)?)
        }
        SolverKind::Tatonnement => {
            let mut opts = TatonnementOptions::default();
            if tol != crate::market_core::DEFAULT_TOL {
                opts.tol = tol;
            }
            if let Some(m) = inst.options.max_iters {
                opts.max_iters = m;
            }
            Ok(solve_tatonnement(inst, &opts)?)
        }
        SolverKind::Reference | SolverKind::Auto => Ok(solve_two_asset(inst, &ReferenceOptions::default())?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::*;

    #[test]
    fn parses_names() {
        for k in [SolverKind::Auto, SolverKind::Convex, SolverKind::Tatonnement, SolverKind::Reference] {
            assert_eq!(k.as_str().parse::<SolverKind>().unwrap(), k);
        }
        assert!("newton".parse::<SolverKind>().is_err());
    }

    #[test]
    fn auto_picks_by_participants() {
        assert_eq!(resolve(&lmsr_instance(), SolverKind::Auto), SolverKind::Convex);
        assert_eq!(resolve(&buy_sell_instance(), SolverKind::Auto), SolverKind::Reference);
    }

    #[test]
    fn rejects_malformed() {
        let inst = BatchInstance::new(symbols(2), vec![sell(0, 0, 1.0, 1.0)]);
        assert!(matches!(solve(&inst, SolverKind::Auto, None), Err(SolveError::Invalid(_))));
    }
}
