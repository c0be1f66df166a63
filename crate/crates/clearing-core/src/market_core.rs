//! Assets, offers, CFMM declarations, batch instances and solutions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfmm::{apply_fee_wrapper, CfmmError, TradingFunction};

/// Tolerance used when an instance does not set its own.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("invalid prices: {0}")]
    InvalidPrices(String),
    #[error("trade shape mismatch: expected {participants} trades over {assets} assets")]
    TradeShape { participants: usize, assets: usize },
}

/// Dense index of an asset within one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetId(pub usize);

impl AssetId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Strictly positive per-asset valuations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MarketError> {
        if values.is_empty() {
            return Err(MarketError::InvalidPrices("empty price vector".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(MarketError::InvalidPrices(format!("entry {i} is {v}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Exchange rate from `a` to `b`: units of `b` per unit of `a`.
    pub fn rate(&self, a: AssetId, b: AssetId) -> f64 {
        self.0[a.0] / self.0[b.0]
    }

    pub fn normalized(&self) -> PriceVector {
        let m = self.0.iter().cloned().fold(f64::INFINITY, f64::min);
        PriceVector(self.0.iter().map(|v| v / m).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Divides by the smallest entry so the minimum becomes exactly 1.
pub fn normalize_prices(values: &[f64]) -> Result<PriceVector, MarketError> {
    Ok(PriceVector::new(values.to_vec())?.normalized())
}

/// Sells up to `amount` of `sell` whenever the rate `sell -> buy` is at least `min_price`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSellOffer {
    pub sell: AssetId,
    pub buy: AssetId,
    pub amount: f64,
    pub min_price: f64,
}

/// Spends `endowment` units of `sell` to acquire up to `target` units of `buy`,
/// paying at most `max_price` units of `sell` per unit of `buy`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitBuyOffer {
    pub sell: AssetId,
    pub buy: AssetId,
    pub endowment: f64,
    pub target: f64,
    pub max_price: f64,
}

impl LimitBuyOffer {
    /// The weight `r0` on the sold asset in the utility `r0 * a + min(k, b)`.
    pub fn limit_rate(&self) -> f64 {
        1.0 / self.max_price
    }
}

#[derive(Debug, Clone)]
pub struct CfmmDecl {
    pub id: String,
    pub assets: Vec<AssetId>,
    pub reserves: Vec<f64>,
    pub function: TradingFunction,
    pub fee: f64,
}

impl CfmmDecl {
    /// The trading function the CFMM actually applies this batch, fee included.
    pub fn effective_function(&self) -> Result<TradingFunction, CfmmError> {
        if self.fee == 0.0 {
            Ok(self.function.clone())
        } else {
            apply_fee_wrapper(&self.function, &self.reserves, self.fee)
        }
    }

    pub fn local_prices(&self, prices: &[f64]) -> Vec<f64> {
        self.assets.iter().map(|a| prices[a.0]).collect()
    }
}

#[derive(Debug, Clone)]
pub enum Participant {
    LimitSell(LimitSellOffer),
    LimitBuy(LimitBuyOffer),
    Cfmm(CfmmDecl),
}

impl Participant {
    pub fn kind(&self) -> &'static str {
        match self {
            Participant::LimitSell(_) => "limit_sell",
            Participant::LimitBuy(_) => "limit_buy",
            Participant::Cfmm(_) => "cfmm",
        }
    }

    /// Holdings the participant brings into the batch.
    pub fn endowment(&self, n_assets: usize) -> Vec<f64> {
        let mut e = vec![0.0; n_assets];
        match self {
            Participant::LimitSell(o) => {
                if o.sell.0 < n_assets {
                    e[o.sell.0] += o.amount;
                }
            }
            Participant::LimitBuy(o) => {
                if o.sell.0 < n_assets {
                    e[o.sell.0] += o.endowment;
                }
            }
            Participant::Cfmm(c) => {
                for (a, r) in c.assets.iter().zip(&c.reserves) {
                    if a.0 < n_assets {
                        e[a.0] += r;
                    }
                }
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOptions {
    pub tol: f64,
    pub max_iters: Option<usize>,
}

impl Default for InstanceOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iters: None }
    }
}

#[derive(Debug, Clone)]
pub struct BatchInstance {
    pub assets: Vec<String>,
    pub participants: Vec<Participant>,
    pub options: InstanceOptions,
}

impl BatchInstance {
    pub fn new(assets: Vec<String>, participants: Vec<Participant>) -> Self {
        Self { assets, participants, options: InstanceOptions::default() }
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn asset(&self, symbol: &str) -> Option<AssetId> {
        self.assets.iter().position(|s| s == symbol).map(AssetId)
    }

    /// Total endowment per asset, floored at a tiny positive value so it can divide.
    pub fn scale(&self) -> Vec<f64> {
        let n = self.n_assets();
        let mut s = vec![0.0; n];
        for p in &self.participants {
            for (acc, e) in s.iter_mut().zip(p.endowment(n)) {
                *acc += e;
            }
        }
        let fallback = s.iter().cloned().fold(0.0, f64::max).max(1.0);
        s.iter().map(|&v| if v > 1e-12 * fallback { v } else { fallback }).collect()
    }

    pub fn cfmm_index(&self, id: &str) -> Option<usize> {
        self.participants
            .iter()
            .position(|p| matches!(p, Participant::Cfmm(c) if c.id == id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    UnknownAsset,
    NegativeAmount,
    SelfTrade,
    Arity,
    InvalidParameter,
    DuplicateAsset,
    Empty,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::UnknownAsset => "unknown-asset",
            ViolationKind::NegativeAmount => "negative-amount",
            ViolationKind::SelfTrade => "self-trade",
            ViolationKind::Arity => "arity",
            ViolationKind::InvalidParameter => "invalid-parameter",
            ViolationKind::DuplicateAsset => "duplicate-asset",
            ViolationKind::Empty => "empty",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub participant: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    pub fn new(participant: Option<usize>, kind: ViolationKind, message: impl Into<String>) -> Self {
        Self { participant, kind, message: message.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.participant {
            Some(i) => write!(f, "participant {i}: {} ({})", self.kind.as_str(), self.message),
            None => write!(f, "{} ({})", self.kind.as_str(), self.message),
        }
    }
}

/// Lists every structural problem with an instance; an empty list means well-formed.
pub fn validate_instance(inst: &BatchInstance) -> Vec<Violation> {
    let n = inst.n_assets();
    let mut out = Vec::new();
    for (i, a) in inst.assets.iter().enumerate() {
        if inst.assets[..i].contains(a) {
            out.push(Violation::new(None, ViolationKind::DuplicateAsset, format!("symbol {a} repeated")));
        }
    }
    if inst.participants.is_empty() {
        out.push(Violation::new(None, ViolationKind::Empty, "no participants"));
    }
    if inst.options.tol.is_nan() || inst.options.tol <= 0.0 {
        out.push(Violation::new(None, ViolationKind::InvalidParameter, "tolerance must be positive"));
    }
    let known = |a: AssetId| a.0 < n;
    for (k, p) in inst.participants.iter().enumerate() {
        let at = Some(k);
        match p {
            Participant::LimitSell(o) => {
                pair_checks(&mut out, at, o.sell, o.buy, n);
                if o.amount.is_nan() || o.amount < 0.0 {
                    out.push(Violation::new(at, ViolationKind::NegativeAmount, "amount must be nonnegative"));
                }
                if !(o.min_price > 0.0 && o.min_price.is_finite()) {
                    out.push(Violation::new(at, ViolationKind::InvalidParameter, "min_price must be positive"));
                }
            }
            Participant::LimitBuy(o) => {
                pair_checks(&mut out, at, o.sell, o.buy, n);
                if o.endowment.is_nan() || o.endowment < 0.0 || o.target.is_nan() || o.target < 0.0 {
                    out.push(Violation::new(at, ViolationKind::NegativeAmount, "endowment and target must be nonnegative"));
                }
                if !(o.max_price > 0.0 && o.max_price.is_finite()) {
                    out.push(Violation::new(at, ViolationKind::InvalidParameter, "max_price must be positive"));
                }
            }
            Participant::Cfmm(c) => {
                for a in &c.assets {
                    if !known(*a) {
                        out.push(Violation::new(at, ViolationKind::UnknownAsset, format!("asset index {}", a.0)));
                    }
                }
                for (i, a) in c.assets.iter().enumerate() {
                    if c.assets[..i].contains(a) {
                        out.push(Violation::new(at, ViolationKind::SelfTrade, "CFMM lists an asset twice"));
                    }
                }
                if c.reserves.len() != c.assets.len() {
                    out.push(Violation::new(
                        at,
                        ViolationKind::Arity,
                        format!("{} reserves for {} assets", c.reserves.len(), c.assets.len()),
                    ));
                } else if let Some(want) = c.function.arity() {
                    if want != c.assets.len() {
                        out.push(Violation::new(
                            at,
                            ViolationKind::Arity,
                            format!("function takes {want} assets, CFMM declares {}", c.assets.len()),
                        ));
                    }
                }
                if c.assets.len() < 2 {
                    out.push(Violation::new(at, ViolationKind::Arity, "a CFMM needs at least two assets"));
                }
                if c.reserves.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
                    out.push(Violation::new(at, ViolationKind::NegativeAmount, "reserves must be finite and nonnegative"));
                }
                if !(0.0..1.0).contains(&c.fee) {
                    out.push(Violation::new(at, ViolationKind::InvalidParameter, format!("fee {} outside [0,1)", c.fee)));
                }
                if let Err(e) = c.function.validate() {
                    out.push(Violation::new(at, ViolationKind::InvalidParameter, e.to_string()));
                }
            }
        }
    }
    out
}

fn pair_checks(out: &mut Vec<Violation>, at: Option<usize>, sell: AssetId, buy: AssetId, n: usize) {
    for a in [sell, buy] {
        if a.0 >= n {
            out.push(Violation::new(at, ViolationKind::UnknownAsset, format!("asset index {}", a.0)));
        }
    }
    if sell == buy {
        out.push(Violation::new(at, ViolationKind::SelfTrade, "sell and buy assets coincide"));
    }
}

/// Outcome of one named verification check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub applicable: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSolution {
    pub prices: PriceVector,
    /// Net asset delta per participant, in declaration order.
    pub trades: Vec<Vec<f64>>,
    pub objective_value: Option<f64>,
    pub iterations: usize,
    pub solver: String,
    pub verifier_report: Vec<CheckResult>,
}

impl BatchSolution {
    pub fn rate(&self, a: AssetId, b: AssetId) -> f64 {
        self.prices.rate(a, b)
    }
}

/// Sum of all participants' deltas per asset.
pub fn net_flows(inst: &BatchInstance, sol: &BatchSolution) -> Result<Vec<f64>, MarketError> {
    let n = inst.n_assets();
    let shape_err = MarketError::TradeShape { participants: inst.participants.len(), assets: n };
    if sol.trades.len() != inst.participants.len() {
        return Err(shape_err);
    }
    let mut flows = vec![0.0; n];
    for t in &sol.trades {
        if t.len() != n {
            return Err(shape_err);
        }
        for (f, d) in flows.iter_mut().zip(t) {
            *f += d;
        }
    }
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sell(s: usize, b: usize, amount: f64, min_price: f64) -> Participant {
        Participant::LimitSell(LimitSellOffer { sell: AssetId(s), buy: AssetId(b), amount, min_price })
    }

    #[test]
    fn normalize_divides_by_min() {
        assert_eq!(normalize_prices(&[2.0, 4.0]).unwrap().values(), &[1.0, 2.0]);
        assert_eq!(normalize_prices(&[1.0, 1.0, 1.0]).unwrap().values(), &[1.0, 1.0, 1.0]);
        assert_eq!(normalize_prices(&[0.5, 0.25, 1.0]).unwrap().values(), &[2.0, 1.0, 4.0]);
    }

    #[test]
    fn normalize_rejects_nonpositive() {
        assert!(matches!(normalize_prices(&[1.0, 0.0]), Err(MarketError::InvalidPrices(_))));
        assert!(matches!(normalize_prices(&[-1.0, 2.0]), Err(MarketError::InvalidPrices(_))));
    }

    #[test]
    fn self_trade_is_one_violation() {
        let inst = BatchInstance::new(vec!["A".into(), "B".into()], vec![sell(0, 0, 1.0, 1.0)]);
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind.as_str(), "self-trade");
    }

    #[test]
    fn reserve_arity_mismatch() {
        let c = CfmmDecl {
            id: "m".into(),
            assets: vec![AssetId(0), AssetId(1)],
            reserves: vec![1.0, 1.0, 1.0],
            function: TradingFunction::ConstantProduct,
            fee: 0.0,
        };
        let inst = BatchInstance::new(vec!["A".into(), "B".into()], vec![Participant::Cfmm(c)]);
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind.as_str(), "arity");
    }

    #[test]
    fn net_flows_sum_deltas() {
        let inst = BatchInstance::new(vec!["A".into(), "B".into()], vec![sell(0, 1, 1.0, 1.0), sell(1, 0, 10.0, 0.01)]);
        let sol = BatchSolution {
            prices: PriceVector::new(vec![10.0, 1.0]).unwrap(),
            trades: vec![vec![-1.0, 10.0], vec![1.0, -10.0]],
            objective_value: None,
            iterations: 0,
            solver: "manual".into(),
            verifier_report: vec![],
        };
        assert_eq!(net_flows(&inst, &sol).unwrap(), vec![0.0, 0.0]);
        let empty = BatchInstance::new(vec!["A".into()], vec![]);
        let none = BatchSolution { trades: vec![], ..sol.clone() };
        assert_eq!(net_flows(&empty, &none).unwrap(), vec![0.0]);
        let short = BatchSolution { trades: vec![vec![0.0, 0.0]], ..sol };
        assert!(net_flows(&inst, &short).is_err());
    }
}
