//! Batch clearing of limit orders and constant function market makers.

pub mod analysis;
pub mod cfmm;
pub mod density;
pub mod fixtures;
pub mod io;
pub mod market_core;
pub mod numeric;
pub mod sequencer;
pub mod solver;

pub use cfmm::{
    apply_fee_wrapper, demand_response, hspec_demand, offer_demand, reserves_at_spot, spot_valuations, CfmmError,
    CustomFunction, DemandResponse, FeeWrapper, Offer, OfferDemand, TradingFunction,
};
pub use density::{density_cfmm, density_from_function, DensityError, DensityPair, HalfDensity, Jump};
pub use market_core::*;
pub mod solver_convex;
pub mod solver_reference;
pub mod solver_tatonnement;
pub mod verifier;

pub use solver_convex::{extract_rational, solve_convex, ConvexError, RationalSolution, SolveOptions};
pub use verifier::{check_nobeyond, verify_solution, VerifierError, VerifierReport};
pub use solver_reference::{equilibrium_rates, excess_interval, legacy_exact_constant_check, solve_two_asset, LegacyReport, ReferenceError, ReferenceOptions};
pub use solver_tatonnement::{aggregate_demand, solve_tatonnement, TatonnementError, TatonnementOptions};
pub use analysis::{budget_invariance_probe, family_identity_check, rule_demand, trading_rule_family, wgs_probe, AnalysisError, ProbeOutcome, Witness};
pub use sequencer::{run_sequence, SequenceBatch, SequenceEntry, SequenceError, SequenceOutcome};
pub use solver::{solve, SolveError, SolverKind};
