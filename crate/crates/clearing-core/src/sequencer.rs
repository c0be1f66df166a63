//! Runs batches in order, carrying CFMM reserves and collected fees from one batch to the next.

use std::collections::HashMap;

use thiserror::Error;

use crate::market_core::{BatchInstance, BatchSolution, CfmmDecl, InstanceOptions, Participant};
use crate::solver::{solve, SolveError, SolverKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("batch {batch}: unknown CFMM {id}")]
    UnknownCfmm { batch: usize, id: String },
    #[error("batch {batch}: assets {got:?} differ from the first batch's {expected:?}")]
    AssetMismatch { batch: usize, expected: Vec<String>, got: Vec<String> },
    #[error("batch {batch}: CFMM {id} redeclared over different assets")]
    IdentityMismatch { batch: usize, id: String },
    #[error("batch {batch}: {source}")]
    Solve { batch: usize, source: SolveError },
}

/// One entry of a batch: a full participant or a reference to a CFMM declared earlier.
#[derive(Debug, Clone)]
pub enum SequenceEntry {
    Participant(Participant),
    CfmmRef(String),
}

#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub assets: Vec<String>,
    pub entries: Vec<SequenceEntry>,
    pub options: InstanceOptions,
}

impl SequenceBatch {
    pub fn new(assets: Vec<String>, entries: Vec<SequenceEntry>) -> Self {
        Self { assets, entries, options: InstanceOptions::default() }
    }
}

impl From<BatchInstance> for SequenceBatch {
    fn from(inst: BatchInstance) -> Self {
        Self { assets: inst.assets, entries: inst.participants.into_iter().map(SequenceEntry::Participant).collect(), options: inst.options }
    }
}

#[derive(Debug, Clone)]
pub struct BatchRecord {
    /// The instance actually solved, with carried reserves filled in.
    pub instance: BatchInstance,
    pub solution: BatchSolution,
    /// Reserves of every known CFMM after the batch, by id.
    pub reserves_after: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub batches: Vec<BatchRecord>,
    /// Final state of every CFMM, in order of first appearance.
    pub cfmms: Vec<CfmmDecl>,
    /// Fees withheld from reserves, per asset.
    pub fee_sink: Vec<f64>,
    /// Sum of the trades of all non-CFMM participants, per asset.
    pub external_flow: Vec<f64>,
    /// Reserves brought in by each CFMM's first declaration, per asset.
    pub deposited: Vec<f64>,
}

impl SequenceOutcome {
    /// Per-asset `reserves + fee sink + external flow - deposits`; zero when holdings are conserved.
    pub fn conservation_residual(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.fee_sink.iter().zip(&self.external_flow).zip(&self.deposited).map(|((f, e), d)| f + e - d).collect();
        for c in &self.cfmms {
            for (a, v) in c.assets.iter().zip(&c.reserves) {
                r[a.0] += v;
            }
        }
        r
    }

    pub fn all_verified(&self) -> bool {
        self.batches.iter().all(|b| b.solution.verifier_report.iter().all(|c| c.passed))
    }
}

/// Solves each batch in turn; every CFMM seen so far takes part in later batches with its carried reserves.
///
/// With `carry_fee_deposit` the fee on a CFMM's inflows stays in its reserves; otherwise it moves to the fee sink.
pub fn run_sequence(batches: &[SequenceBatch], carry_fee_deposit: bool) -> Result<SequenceOutcome, SequenceError> {
    run_sequence_with(batches, carry_fee_deposit, SolverKind::Auto)
}

pub fn run_sequence_with(batches: &[SequenceBatch], carry_fee_deposit: bool, solver: SolverKind) -> Result<SequenceOutcome, SequenceError> {
    let assets = batches.first().map(|b| b.assets.clone()).unwrap_or_default();
    let n = assets.len();
    let mut known: Vec<CfmmDecl> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out = SequenceOutcome { batches: Vec::new(), cfmms: Vec::new(), fee_sink: vec![0.0; n], external_flow: vec![0.0; n], deposited: vec![0.0; n] };

    for (t, batch) in batches.iter().enumerate() {
        if batch.assets != assets {
            return Err(SequenceError::AssetMismatch { batch: t, expected: assets.clone(), got: batch.assets.clone() });
        }
        let mut participants = Vec::new();
        let mut present = vec![false; known.len()];
        for entry in &batch.entries {
            match entry {
                SequenceEntry::Participant(Participant::Cfmm(c)) => match index.get(&c.id) {
                    Some(&k) => {
                        if known[k].assets != c.assets {
                            return Err(SequenceError::IdentityMismatch { batch: t, id: c.id.clone() });
                        }
                        present[k] = true;
                        participants.push(Participant::Cfmm(known[k].clone()));
                    }
                    None => {
                        for (a, r) in c.assets.iter().zip(&c.reserves) {
                            out.deposited[a.0] += r;
                        }
                        index.insert(c.id.clone(), known.len());
                        known.push(c.clone());
                        present.push(true);
                        participants.push(Participant::Cfmm(c.clone()));
                    }
                },
                SequenceEntry::CfmmRef(id) => {
                    let &k = index.get(id).ok_or_else(|| SequenceError::UnknownCfmm { batch: t, id: id.clone() })?;
                    present[k] = true;
                    participants.push(Participant::Cfmm(known[k].clone()));
                }
                SequenceEntry::Participant(p) => participants.push(p.clone()),
            }
        }
        for (k, c) in known.iter().enumerate() {
            if !present[k] {
                participants.push(Participant::Cfmm(c.clone()));
            }
        }
        let instance = BatchInstance { assets: assets.clone(), participants, options: batch.options.clone() };
        let solution = solve(&instance, solver, None).map_err(|source| SequenceError::Solve { batch: t, source })?;

        for (part, trade) in instance.participants.iter().zip(&solution.trades) {
            match part {
                Participant::Cfmm(c) => {
                    let k = index[&c.id];
                    let state = &mut known[k];
                    for (slot, a) in c.assets.iter().enumerate() {
                        let d = trade[a.0];
                        let fee = if d > 0.0 { c.fee * d } else { 0.0 };
                        if carry_fee_deposit {
                            state.reserves[slot] += d;
                        } else {
                            state.reserves[slot] += d - fee;
                            out.fee_sink[a.0] += fee;
                        }
                    }
                }
                _ => {
                    for (acc, d) in out.external_flow.iter_mut().zip(trade) {
                        *acc += d;
                    }
                }
            }
        }
        let reserves_after = known.iter().map(|c| (c.id.clone(), c.reserves.clone())).collect();
        out.batches.push(BatchRecord { instance, solution, reserves_after });
    }
    out.cfmms = known;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfmm::{spot_valuations, TradingFunction};
    use crate::fixtures::*;

    #[test]
    fn unknown_reference_rejected() {
        let b = SequenceBatch::new(symbols(2), vec![SequenceEntry::CfmmRef("m9".into())]);
        assert!(matches!(run_sequence(&[b], false), Err(SequenceError::UnknownCfmm { batch: 0, .. })));
    }

    #[test]
    fn identical_single_cfmm_batches_do_not_trade() {
        let b: SequenceBatch = lone_product_instance().into();
        let out = run_sequence(&[b.clone(), b], false).unwrap();
        assert_eq!(out.batches.len(), 2);
        assert!(out.batches[1].solution.trades[0].iter().all(|d| d.abs() < 1e-9));
        assert!(out.all_verified());
    }

    #[test]
    fn lmsr_then_empty_batch_holds_rate() {
        let first: SequenceBatch = lmsr_instance().into();
        let second = SequenceBatch::new(symbols(2), vec![SequenceEntry::CfmmRef("m1".into())]);
        let out = run_sequence(&[first, second], false).unwrap();
        let r1 = out.batches[0].solution.prices.values().to_vec();
        let r2 = out.batches[1].solution.prices.values().to_vec();
        assert!((r1[0] / r1[1] - r2[0] / r2[1]).abs() < 1e-7);
        assert!(out.batches[1].solution.trades[0].iter().all(|d| d.abs() < 1e-7));
        let spot = spot_valuations(&TradingFunction::Lmsr, &out.cfmms[0].reserves).unwrap();
        assert!((spot[0] / spot[1] - r1[0] / r1[1]).abs() < 1e-7);
    }

    #[test]
    fn mismatched_assets_rejected() {
        let a: SequenceBatch = lmsr_instance().into();
        let mut b = a.clone();
        b.assets = vec!["A".into(), "C".into()];
        assert!(matches!(run_sequence(&[a, b], true), Err(SequenceError::AssetMismatch { batch: 1, .. })));
    }
}
