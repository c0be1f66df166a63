//! Sampled probes for substitutability, budget-invariance and the symmetric trading-rule family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cfmm::{demand_response, reserves_at_spot, spot_valuations, CfmmError, TradingFunction};
use crate::numeric::angle_between;

pub const DEFAULT_SAMPLES: usize = 256;
pub const DEFAULT_SEED: u64 = 0x9e37_79b9;
/// Largest tolerated relative drop in another asset's demand.
pub const WGS_TOL: f64 = 1e-9;
/// Largest tolerated angle, in radians, between bundles or gradients that should be parallel.
pub const ANGLE_TOL: f64 = 1e-7;
pub const FAMILY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("at least one sample is required")]
    NoSamples,
    #[error("vectors of lengths {0} and {1}")]
    Shape(usize, usize),
    #[error("entries must be positive and finite")]
    NonPositive,
    #[error(transparent)]
    Cfmm(#[from] CfmmError),
}

/// A sampled counterexample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    /// Which property failed: `wgs`, `bundle_scaling` or `ray_gradient`.
    pub property: String,
    pub point: Vec<f64>,
    pub other: Vec<f64>,
    pub asset: Option<usize>,
    /// Size of the deviation: a relative demand drop or an angle.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub probe: String,
    pub samples: usize,
    /// Largest deviation seen among the samples checked.
    pub worst: f64,
    pub witness: Option<Witness>,
}

impl ProbeOutcome {
    pub fn passed(&self) -> bool {
        self.witness.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { samples: DEFAULT_SAMPLES, seed: DEFAULT_SEED }
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

fn arity(f: &TradingFunction, fallback: usize) -> usize {
    f.arity().unwrap_or(fallback)
}

fn holdings(f: &TradingFunction, reserves: &[f64], p: &[f64]) -> Result<Vec<f64>, CfmmError> {
    Ok(demand_response(f, reserves, p)?.new_reserves)
}

pub fn wgs_probe(f: &TradingFunction, reserves: &[f64], samples: usize) -> Result<ProbeOutcome, AnalysisError> {
    wgs_probe_with(f, reserves, &ProbeConfig { samples, ..ProbeConfig::default() })
}

/// Raises one price at a time and looks for another asset whose demand falls.
pub fn wgs_probe_with(f: &TradingFunction, reserves: &[f64], cfg: &ProbeConfig) -> Result<ProbeOutcome, AnalysisError> {
    if cfg.samples == 0 {
        return Err(AnalysisError::NoSamples);
    }
    let n = reserves.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.samples {
        let p: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 1.0 / 16.0, 16.0)).collect();
        let raised = rng.gen_range(0..n);
        let mut q = p.clone();
        q[raised] *= log_uniform(&mut rng, 1.05, 16.0);
        let before = holdings(f, reserves, &p)?;
        let after = holdings(f, reserves, &q)?;
        for j in (0..n).filter(|&j| j != raised) {
            let drop = (before[j] - after[j]) / before[j].abs().max(1.0);
            worst = worst.max(drop);
            if drop > WGS_TOL {
                let witness = Witness { property: "wgs".into(), point: p, other: q, asset: Some(j), deviation: drop };
                return Ok(ProbeOutcome { probe: "wgs".into(), samples: cfg.samples, worst, witness: Some(witness) });
            }
        }
    }
    Ok(ProbeOutcome { probe: "wgs".into(), samples: cfg.samples, worst, witness: None })
}

pub fn budget_invariance_probe(f: &TradingFunction, samples: usize) -> Result<ProbeOutcome, AnalysisError> {
    budget_invariance_probe_with(f, &ProbeConfig { samples, ..ProbeConfig::default() })
}

/// Checks that optimal bundles scale with the budget and that the gradient keeps its direction along rays.
pub fn budget_invariance_probe_with(f: &TradingFunction, cfg: &ProbeConfig) -> Result<ProbeOutcome, AnalysisError> {
    if cfg.samples == 0 {
        return Err(AnalysisError::NoSamples);
    }
    let n = arity(f, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    let done = |worst: f64, witness: Option<Witness>| ProbeOutcome { probe: "budget".into(), samples: cfg.samples, worst, witness };
    for _ in 0..cfg.samples {
        let r: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 1.0 / 16.0, 16.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 1.0 / 16.0, 16.0)).collect();
        let c = log_uniform(&mut rng, 1.0 / 16.0, 16.0);
        let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
        let small = holdings(f, &r, &p)?;
        let large = holdings(f, &scaled, &p)?;
        let angle = angle_between(&small, &large);
        worst = worst.max(angle);
        if angle > ANGLE_TOL {
            return Ok(done(worst, Some(Witness { property: "bundle_scaling".into(), point: small, other: large, asset: None, deviation: angle })));
        }

        let x: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, 1.0 / 16.0, 16.0)).collect();
        let t = log_uniform(&mut rng, 1.0 / 16.0, 16.0);
        let tx: Vec<f64> = x.iter().map(|v| v * t).collect();
        let angle = match (spot_valuations(f, &x), spot_valuations(f, &tx)) {
            (Ok(g0), Ok(g1)) => angle_between(&g0, &g1),
            (Err(CfmmError::SingularSpot(_)), Err(CfmmError::SingularSpot(_))) => 0.0,
            (Err(e @ CfmmError::SingularSpot(_)), Ok(_)) | (Ok(_), Err(e @ CfmmError::SingularSpot(_))) => {
                let detail = e.to_string();
                return Ok(done(worst, Some(Witness { property: format!("ray_gradient: {detail}"), point: x, other: tx, asset: None, deviation: f64::INFINITY })));
            }
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        };
        worst = worst.max(angle);
        if angle > ANGLE_TOL {
            return Ok(done(worst, Some(Witness { property: "ray_gradient".into(), point: x, other: tx, asset: None, deviation: angle })));
        }
    }
    Ok(done(worst, None))
}

/// The symmetric rule `s'_a = s_a^(1 - alpha) p_a^alpha` moving spot valuations `s` toward batch prices `p`.
pub fn trading_rule_family(s: &[f64], p: &[f64], alpha: f64) -> Result<Vec<f64>, AnalysisError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AnalysisError::InvalidAlpha(alpha));
    }
    if s.len() != p.len() {
        return Err(AnalysisError::Shape(s.len(), p.len()));
    }
    if s.iter().chain(p).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(AnalysisError::NonPositive);
    }
    Ok(s.iter().zip(p).map(|(si, pi)| si.powf(1.0 - alpha) * pi.powf(alpha)).collect())
}

/// Net trade of a CFMM that moves its spot valuations by the rule with parameter `alpha`.
pub fn rule_demand(f: &TradingFunction, reserves: &[f64], prices: &[f64], alpha: f64) -> Result<Vec<f64>, AnalysisError> {
    let s = spot_valuations(f, reserves)?;
    let target = trading_rule_family(&s, prices, alpha)?;
    let x = reserves_at_spot(f, reserves, prices, &target)?;
    Ok(x.iter().zip(reserves).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub samples: usize,
    /// Largest relative error of `F(c s, c p) = c F(s, p)`.
    pub equivariance: f64,
    /// Largest relative error of the pairwise composition identity.
    pub composition: f64,
}

impl FamilyReport {
    pub fn passed(&self) -> bool {
        self.equivariance <= FAMILY_TOL && self.composition <= FAMILY_TOL
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Checks redenomination equivariance and pairwise composition on random triples.
pub fn family_identity_check(samples: usize) -> Result<FamilyReport, AnalysisError> {
    family_identity_check_seeded(samples, DEFAULT_SEED)
}

pub fn family_identity_check_seeded(samples: usize, seed: u64) -> Result<FamilyReport, AnalysisError> {
    if samples == 0 {
        return Err(AnalysisError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FamilyReport { samples, equivariance: 0.0, composition: 0.0 };
    for _ in 0..samples {
        let s: Vec<f64> = (0..3).map(|_| log_uniform(&mut rng, 1e-3, 1e3)).collect();
        let p: Vec<f64> = (0..3).map(|_| log_uniform(&mut rng, 1e-3, 1e3)).collect();
        let alpha: f64 = rng.gen_range(0.0..=1.0);
        let c = log_uniform(&mut rng, 1e-3, 1e3);

        let base = trading_rule_family(&s, &p, alpha)?;
        let cs: Vec<f64> = s.iter().map(|v| v * c).collect();
        let cp: Vec<f64> = p.iter().map(|v| v * c).collect();
        let moved = trading_rule_family(&cs, &cp, alpha)?;
        for (m, b) in moved.iter().zip(&base) {
            report.equivariance = report.equivariance.max(rel(*m, c * b));
        }

        let pair = |i: usize, j: usize| trading_rule_family(&[s[i] / s[j]], &[p[i] / p[j]], alpha).map(|v| v[0]);
        let composed = pair(0, 1)? * pair(1, 2)?;
        report.composition = report.composition.max(rel(composed, pair(0, 2)?));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfmm::CustomFunction;

    #[test]
    fn rule_endpoints() {
        let s = [2.0, 5.0];
        let p = [3.0, 7.0];
        assert_eq!(trading_rule_family(&s, &p, 1.0).unwrap(), p.to_vec());
        assert_eq!(trading_rule_family(&s, &p, 0.0).unwrap(), s.to_vec());
    }

    #[test]
    fn rule_half_alpha() {
        let v = trading_rule_family(&[1.0, 4.0], &[1.0, 9.0], 0.5).unwrap();
        assert_eq!(v, vec![1.0, 6.0]);
    }

    #[test]
    fn rule_rejects_alpha_outside_unit_interval() {
        assert_eq!(trading_rule_family(&[1.0], &[1.0], 1.5), Err(AnalysisError::InvalidAlpha(1.5)));
        assert_eq!(trading_rule_family(&[1.0], &[1.0], -0.1), Err(AnalysisError::InvalidAlpha(-0.1)));
    }

    #[test]
    fn family_identities_hold() {
        let r = family_identity_check(2000).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn product_is_substitutes() {
        let r = wgs_probe(&TradingFunction::ConstantProduct, &[3.0, 5.0], 256).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn square_plus_product_has_wgs_witness() {
        let f = TradingFunction::Custom(CustomFunction::from_expr("x*x + y*z", 3).unwrap());
        let r = wgs_probe(&f, &[1.0, 1.0, 1.0], 256).unwrap();
        let w = r.witness.expect("witness");
        assert_eq!(w.property, "wgs");
        assert!(w.deviation > 1e-3);
    }

    #[test]
    fn sum_plus_product_not_budget_invariant() {
        let f = TradingFunction::Custom(CustomFunction::from_expr("x + y + x*y", 2).unwrap());
        let r = budget_invariance_probe(&f, 64).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn weighted_product_spends_fixed_fraction() {
        let f = TradingFunction::WeightedProduct { wa: 1.0, wb: 3.0 };
        for (k, p) in [(1.0, [1.0, 2.0]), (10.0, [3.0, 0.5]), (250.0, [0.2, 7.0])] {
            let x = demand_response(&f, &[k / p[0], 0.0], &p).unwrap().new_reserves;
            assert!((x[0] * p[0] / k - 0.25).abs() < 1e-14);
        }
        assert!(budget_invariance_probe(&f, 64).unwrap().passed());
    }

    #[test]
    fn zero_samples_rejected() {
        assert_eq!(wgs_probe(&TradingFunction::ConstantProduct, &[1.0, 1.0], 0), Err(AnalysisError::NoSamples));
    }
}
