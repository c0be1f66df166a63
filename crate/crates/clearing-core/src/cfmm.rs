//! Trading functions, spot valuations, demand responses and the fee wrapper.

use std::fmt;
use std::sync::Arc;

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::density::DensityPair;
use crate::market_core::{LimitBuyOffer, LimitSellOffer};
use crate::numeric::{bisect_root, numeric_gradient};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CfmmError {
    #[error("spot valuation undefined at reserves {0:?}")]
    SingularSpot(Vec<f64>),
    #[error("could not certify a maximum of {0} on the budget line")]
    NonConcaveFunction(String),
    #[error("budget specification evaluates to {value} at rate {rate}")]
    DegenerateSpec { value: f64, rate: f64 },
    #[error("fee {0} outside [0, 1)")]
    InvalidFee(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("prices must be positive and finite")]
    InvalidPrices,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("expression error: {0}")]
    Expression(String),
}

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A black-box trading function evaluated numerically.
#[derive(Clone)]
pub struct CustomFunction {
    name: String,
    arity: usize,
    eval: EvalFn,
}

const ALIASES: [&str; 4] = ["x", "y", "z", "w"];

impl CustomFunction {
    pub fn new(name: impl Into<String>, arity: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), arity, eval: Arc::new(f) }
    }

    /// Parses an arithmetic expression over `x0, x1, ...` (or `x, y, z, w`).
    pub fn from_expr(expr: &str, arity: usize) -> Result<Self, CfmmError> {
        let node: Node<DefaultNumericTypes> =
            evalexpr::build_operator_tree(expr).map_err(|e| CfmmError::Expression(e.to_string()))?;
        let known: Vec<String> = (0..arity)
            .map(|i| format!("x{i}"))
            .chain(ALIASES.iter().take(arity).map(|s| s.to_string()))
            .collect();
        if let Some(bad) = node.iter_read_variable_identifiers().find(|v| !known.iter().any(|k| k == v)) {
            return Err(CfmmError::Expression(format!("unknown variable {bad}")));
        }
        let used: Vec<(String, usize)> = node
            .iter_read_variable_identifiers()
            .map(|v| {
                let i = ALIASES.iter().position(|a| *a == v).unwrap_or_else(|| v[1..].parse().unwrap_or(0));
                (v.to_string(), i)
            })
            .collect();
        let f = move |x: &[f64]| -> f64 {
            let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
            for (name, i) in &used {
                let _ = ctx.set_value(name.clone(), Value::Float(x[*i]));
            }
            node.eval_number_with_context(&ctx).unwrap_or(f64::NAN)
        };
        let probe = f(&vec![1.0; arity]);
        if !probe.is_finite() {
            return Err(CfmmError::Expression(format!("{expr} does not evaluate to a number")));
        }
        Ok(Self::new(expr, arity, f))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

impl fmt::Debug for CustomFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunction").field("name", &self.name).field("arity", &self.arity).finish()
    }
}

/// A trading function charging `eps` on net inflows relative to `base`.
#[derive(Debug, Clone)]
pub struct FeeWrapper {
    pub inner: TradingFunction,
    pub base: Vec<f64>,
    pub eps: f64,
}

impl FeeWrapper {
    /// Reserves after setting aside the fee on every asset that entered on net.
    pub fn chi(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.base)
            .map(|(&xi, &bi)| if xi <= bi { xi } else { bi + (1.0 - self.eps) * (xi - bi) })
            .collect()
    }

    pub fn fee_amounts(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.chi(x)).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone)]
pub enum TradingFunction {
    ConstantProduct,
    WeightedProduct { wa: f64, wb: f64 },
    ConstantSum { rate: f64 },
    Lmsr,
    Monomial { exponents: Vec<f64> },
    Hspec { coeffs: Vec<f64> },
    DensityPair(Arc<DensityPair>),
    Custom(CustomFunction),
    Fee(Box<FeeWrapper>),
}

impl TradingFunction {
    pub fn name(&self) -> String {
        match self {
            TradingFunction::ConstantProduct => "constant_product".into(),
            TradingFunction::WeightedProduct { .. } => "weighted_product".into(),
            TradingFunction::ConstantSum { .. } => "constant_sum".into(),
            TradingFunction::Lmsr => "lmsr".into(),
            TradingFunction::Monomial { .. } => "monomial".into(),
            TradingFunction::Hspec { .. } => "hspec".into(),
            TradingFunction::DensityPair(_) => "density_pair".into(),
            TradingFunction::Custom(c) => format!("custom({})", c.name()),
            TradingFunction::Fee(w) => format!("fee({}, {})", w.inner.name(), w.eps),
        }
    }

    /// Number of assets the function is defined on.
    pub fn arity(&self) -> Option<usize> {
        match self {
            TradingFunction::Monomial { exponents } => Some(exponents.len()),
            TradingFunction::Custom(c) => Some(c.arity()),
            TradingFunction::Fee(w) => w.inner.arity(),
            _ => Some(2),
        }
    }

    pub fn validate(&self) -> Result<(), CfmmError> {
        let bad = |m: String| Err(CfmmError::InvalidParameter(m));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        match self {
            TradingFunction::ConstantProduct | TradingFunction::Lmsr => Ok(()),
            TradingFunction::WeightedProduct { wa, wb } => {
                if pos(*wa) && pos(*wb) { Ok(()) } else { bad(format!("weights ({wa}, {wb}) must be positive")) }
            }
            TradingFunction::ConstantSum { rate } => {
                if pos(*rate) { Ok(()) } else { bad(format!("rate {rate} must be positive")) }
            }
            TradingFunction::Monomial { exponents } => {
                if exponents.len() >= 2 && exponents.iter().all(|d| pos(*d)) {
                    Ok(())
                } else {
                    bad("monomial exponents must be positive, at least two".into())
                }
            }
            TradingFunction::Hspec { coeffs } => {
                if coeffs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                    bad("h coefficients must be nonnegative".into())
                } else if !coeffs.iter().any(|c| *c > 0.0) {
                    Err(CfmmError::DegenerateSpec { value: 0.0, rate: 1.0 })
                } else {
                    Ok(())
                }
            }
            TradingFunction::DensityPair(p) => p.check_crossing().map_err(|e| CfmmError::InvalidParameter(e.to_string())),
            TradingFunction::Custom(c) => {
                if c.arity() >= 2 { Ok(()) } else { bad("custom function needs at least two assets".into()) }
            }
            TradingFunction::Fee(w) => {
                if !(0.0..1.0).contains(&w.eps) {
                    return Err(CfmmError::InvalidFee(w.eps));
                }
                w.inner.validate()
            }
        }
    }

    /// The function value, when the family is defined by a value rather than a demand rule.
    pub fn value(&self, x: &[f64]) -> Option<f64> {
        match self {
            TradingFunction::ConstantProduct => Some(x[0] * x[1]),
            TradingFunction::WeightedProduct { wa, wb } => Some(x[0].powf(*wa) * x[1].powf(*wb)),
            TradingFunction::ConstantSum { rate } => Some(rate * x[0] + x[1]),
            TradingFunction::Lmsr => Some(2.0 - (-x[0]).exp() - (-x[1]).exp()),
            TradingFunction::Monomial { exponents } => Some(x.iter().zip(exponents).map(|(v, d)| v.powf(*d)).product()),
            TradingFunction::Custom(c) => Some(c.eval(x)),
            TradingFunction::Fee(w) => w.inner.value(&w.chi(x)),
            TradingFunction::Hspec { .. } | TradingFunction::DensityPair(_) => None,
        }
    }

    pub fn is_value_defined(&self) -> bool {
        match self {
            TradingFunction::Hspec { .. } | TradingFunction::DensityPair(_) => false,
            TradingFunction::Fee(w) => w.inner.is_value_defined(),
            _ => true,
        }
    }

    /// Families whose optimal holdings are a smooth interior point of the budget line.
    pub fn is_strictly_quasi_concave(&self) -> bool {
        match self {
            TradingFunction::ConstantSum { .. } | TradingFunction::DensityPair(_) => false,
            TradingFunction::Fee(w) => w.inner.is_strictly_quasi_concave(),
            _ => true,
        }
    }
}

/// Evaluates `h` at `t`.
pub fn h_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn h_is_constant(coeffs: &[f64]) -> bool {
    coeffs.iter().skip(1).all(|c| *c == 0.0)
}

/// Rate `t` at which the budget rule holds current reserves: `b (h(t) - 1) = t a`.
pub fn hspec_spot_rate(coeffs: &[f64], a: f64, b: f64) -> Result<f64, CfmmError> {
    let singular = || CfmmError::SingularSpot(vec![a, b]);
    if !(a > 0.0 && b > 0.0) {
        return Err(singular());
    }
    if h_is_constant(coeffs) {
        let c = coeffs.first().copied().unwrap_or(0.0);
        return if c > 1.0 { Ok(b * (c - 1.0) / a) } else { Err(singular()) };
    }
    let phi = |t: f64| b * (h_eval(coeffs, t) - 1.0) - t * a;
    let mut prev = 1e-12f64;
    let mut fprev = phi(prev);
    for k in 1..=480 {
        let t = 1e-12 * 10f64.powf(k as f64 / 20.0);
        let ft = phi(t);
        if fprev == 0.0 {
            return Ok(prev);
        }
        if (ft > 0.0) != (fprev > 0.0) {
            let r = bisect_root(prev.ln(), t.ln(), |u| phi(u.exp()), 200);
            return Ok(r.exp());
        }
        prev = t;
        fprev = ft;
    }
    Err(singular())
}

/// Gradient of `f` at `reserves`, up to a positive factor.
pub fn spot_valuations(f: &TradingFunction, reserves: &[f64]) -> Result<Vec<f64>, CfmmError> {
    check_len(f, reserves.len())?;
    let singular = || CfmmError::SingularSpot(reserves.to_vec());
    match f {
        TradingFunction::ConstantProduct => {
            if reserves[0] > 0.0 && reserves[1] > 0.0 {
                Ok(vec![reserves[1], reserves[0]])
            } else {
                Err(singular())
            }
        }
        TradingFunction::WeightedProduct { wa, wb } => {
            if reserves[0] > 0.0 && reserves[1] > 0.0 {
                Ok(vec![wa / reserves[0], wb / reserves[1]])
            } else {
                Err(singular())
            }
        }
        TradingFunction::Monomial { exponents } => {
            if reserves.iter().all(|r| *r > 0.0) {
                Ok(exponents.iter().zip(reserves).map(|(d, x)| d / x).collect())
            } else {
                Err(singular())
            }
        }
        TradingFunction::ConstantSum { rate } => Ok(vec![*rate, 1.0]),
        TradingFunction::Lmsr => {
            let m = reserves[0].min(reserves[1]);
            Ok(vec![(m - reserves[0]).exp(), (m - reserves[1]).exp()])
        }
        TradingFunction::Hspec { coeffs } => Ok(vec![hspec_spot_rate(coeffs, reserves[0], reserves[1])?, 1.0]),
        TradingFunction::DensityPair(pair) => {
            let hi = pair.forward.spot();
            let lo = 1.0 / pair.reverse.spot();
            let r = match (hi.is_finite(), lo > 0.0) {
                (true, true) => (hi * lo).sqrt(),
                (true, false) => hi,
                (false, true) => lo,
                (false, false) => return Err(singular()),
            };
            Ok(vec![r, 1.0])
        }
        TradingFunction::Custom(c) => {
            let g = numeric_gradient(&|x: &[f64]| c.eval(x), reserves);
            if g.iter().all(|v| v.is_finite() && *v >= 0.0) && g.iter().any(|v| *v > 0.0) {
                Ok(g)
            } else {
                Err(singular())
            }
        }
        TradingFunction::Fee(w) => {
            let image = w.chi(reserves);
            let mut g = spot_valuations(&w.inner, &image)?;
            for ((gi, x), b) in g.iter_mut().zip(reserves).zip(&w.base) {
                if x > b {
                    *gi *= 1.0 - w.eps;
                }
            }
            Ok(g)
        }
    }
}

/// Spot exchange rate from the first to the second asset.
pub fn spot_rate(f: &TradingFunction, reserves: &[f64]) -> Result<f64, CfmmError> {
    let v = spot_valuations(f, reserves)?;
    Ok(v[0] / v[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandResponse {
    pub new_reserves: Vec<f64>,
    pub delta: Vec<f64>,
    pub spot_after: Option<Vec<f64>>,
    /// Endpoints of the optimal delta segment when the response is set-valued.
    pub interval: Option<[Vec<f64>; 2]>,
    /// Reserves after the fee is set aside, for fee-charging functions.
    pub post_fee: Option<Vec<f64>>,
}

impl DemandResponse {
    fn from_delta(f: &TradingFunction, reserves: &[f64], delta: Vec<f64>) -> Self {
        let new_reserves: Vec<f64> = reserves.iter().zip(&delta).map(|(r, d)| r + d).collect();
        let spot_after = spot_valuations(f, &new_reserves).ok();
        Self { new_reserves, delta, spot_after, interval: None, post_fee: None }
    }

    /// Distance from `delta` to the optimal set, per coordinate maximum.
    pub fn distance(&self, delta: &[f64]) -> f64 {
        match &self.interval {
            None => self.delta.iter().zip(delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            Some([lo, hi]) => segment_distance(lo, hi, delta),
        }
    }
}

pub(crate) fn segment_distance(lo: &[f64], hi: &[f64], x: &[f64]) -> f64 {
    let dir: Vec<f64> = hi.iter().zip(lo).map(|(h, l)| h - l).collect();
    let den: f64 = dir.iter().map(|d| d * d).sum();
    let t = if den > 0.0 {
        (x.iter().zip(lo).zip(&dir).map(|((xi, l), d)| (xi - l) * d).sum::<f64>() / den).clamp(0.0, 1.0)
    } else {
        0.0
    };
    lo.iter()
        .zip(&dir)
        .zip(x)
        .map(|((l, d), xi)| (l + t * d - xi).abs())
        .fold(0.0, f64::max)
}

fn check_len(f: &TradingFunction, got: usize) -> Result<(), CfmmError> {
    match f.arity() {
        Some(expected) if expected != got => Err(CfmmError::Shape { expected, got }),
        _ => Ok(()),
    }
}

fn check_prices(prices: &[f64]) -> Result<(), CfmmError> {
    if prices.iter().all(|p| p.is_finite() && *p > 0.0) {
        Ok(())
    } else {
        Err(CfmmError::InvalidPrices)
    }
}

/// Relative distance below which a price ratio counts as equal to a fixed rate.
pub const RATE_TIE: f64 = 1e-12;

fn ties(t: f64, rate: f64) -> bool {
    (t / rate - 1.0).abs() <= RATE_TIE
}

/// Optimal holdings of a CFMM at `prices`: maximize `f` on `p.x <= p.reserves`.
pub fn demand_response(f: &TradingFunction, reserves: &[f64], prices: &[f64]) -> Result<DemandResponse, CfmmError> {
    check_len(f, reserves.len())?;
    if prices.len() != reserves.len() {
        return Err(CfmmError::Shape { expected: reserves.len(), got: prices.len() });
    }
    check_prices(prices)?;
    match f {
        TradingFunction::Fee(w) => fee_demand(w, reserves, prices),
        TradingFunction::DensityPair(pair) => Ok(density_demand(pair, reserves, prices)),
        TradingFunction::ConstantSum { rate } => {
            let t = prices[0] / prices[1];
            if ties(t, *rate) {
                let k: f64 = prices[0] * reserves[0] + prices[1] * reserves[1];
                let all_b = vec![-reserves[0], k / prices[1] - reserves[1]];
                let all_a = vec![k / prices[0] - reserves[0], -reserves[1]];
                let mut r = DemandResponse::from_delta(f, reserves, vec![0.0, 0.0]);
                r.interval = Some([all_b, all_a]);
                Ok(r)
            } else {
                let x = reserves_at_spot(f, reserves, prices, prices)?;
                Ok(DemandResponse::from_delta(f, reserves, diff(&x, reserves)))
            }
        }
        _ => {
            let x = reserves_at_spot(f, reserves, prices, prices)?;
            Ok(DemandResponse::from_delta(f, reserves, diff(&x, reserves)))
        }
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Demand of the budget-fraction rule: spend `1/h(p_A/p_B)` of the budget on `B`.
pub fn hspec_demand(h: &[f64], reserves: &[f64], prices: &[f64]) -> Result<DemandResponse, CfmmError> {
    demand_response(&TradingFunction::Hspec { coeffs: h.to_vec() }, reserves, prices)
}

/// The point of the budget line `p.x = p.reserves` whose spot valuations are
/// proportional to `target` (corners when no interior point has that spot).
pub fn reserves_at_spot(f: &TradingFunction, reserves: &[f64], prices: &[f64], target: &[f64]) -> Result<Vec<f64>, CfmmError> {
    check_len(f, reserves.len())?;
    check_prices(prices)?;
    check_prices(target)?;
    let k: f64 = prices.iter().zip(reserves).map(|(p, x)| p * x).sum();
    if reserves.len() == 2 {
        let (pa, pb) = (prices[0], prices[1]);
        let t = target[0] / target[1];
        let weighted = |wa: f64, wb: f64| {
            let a = k / (pa + pb * t * wb / wa);
            vec![a, t * (wb / wa) * a]
        };
        return match f {
            TradingFunction::ConstantProduct => {
                let a = k / (pa + pb * t);
                Ok(vec![a, t * a])
            }
            TradingFunction::WeightedProduct { wa, wb } => Ok(weighted(*wa, *wb)),
            TradingFunction::Monomial { exponents } => Ok(weighted(exponents[0], exponents[1])),
            TradingFunction::Lmsr => {
                let a = (k - pb * t.ln()) / (pa + pb);
                let b = a + t.ln();
                if a < 0.0 {
                    Ok(vec![0.0, k / pb])
                } else if b < 0.0 {
                    Ok(vec![k / pa, 0.0])
                } else {
                    Ok(vec![a, b])
                }
            }
            TradingFunction::ConstantSum { rate } => {
                if t > *rate {
                    Ok(vec![0.0, k / pb])
                } else if t < *rate {
                    Ok(vec![k / pa, 0.0])
                } else {
                    Ok(reserves.to_vec())
                }
            }
            TradingFunction::Hspec { coeffs } => {
                let h = h_eval(coeffs, t);
                if h.is_nan() || h < 1.0 {
                    return Err(CfmmError::DegenerateSpec { value: h, rate: t });
                }
                let b = k / (pa * (h - 1.0) / t + pb);
                Ok(vec![b * (h - 1.0) / t, b])
            }
            TradingFunction::Custom(c) => custom_budget_point(c, k, pa, pb, t, prices[0] / prices[1] == t),
            TradingFunction::DensityPair(_) | TradingFunction::Fee(_) => {
                Err(CfmmError::Unsupported(format!("{} has no spot-target reconstruction", f.name())))
            }
        };
    }
    match f {
        TradingFunction::Monomial { exponents } => {
            let lambda: f64 = prices.iter().zip(exponents).zip(target).map(|((p, d), s)| p * d / s).sum::<f64>() / k;
            Ok(exponents.iter().zip(target).map(|(d, s)| d / (lambda * s)).collect())
        }
        TradingFunction::Custom(c) => {
            let ratio = target[0] / prices[0];
            if target.iter().zip(prices).any(|(s, p)| ((s / p) / ratio - 1.0).abs() > 1e-12) {
                return Err(CfmmError::Unsupported("multi-asset custom functions only target the batch prices".into()));
            }
            Ok(maximize_on_budget(c, prices, k))
        }
        _ => Err(CfmmError::Unsupported(format!("{} on {} assets", f.name(), reserves.len()))),
    }
}

fn custom_budget_point(c: &CustomFunction, k: f64, pa: f64, pb: f64, t: f64, certify: bool) -> Result<Vec<f64>, CfmmError> {
    if k <= 0.0 {
        return Ok(vec![0.0, 0.0]);
    }
    let amax = k / pa;
    let point = |a: f64| vec![a, (k - pa * a) / pb];
    let psi = |a: f64| {
        let g = numeric_gradient(&|x: &[f64]| c.eval(x), &point(a));
        g[0] - t * g[1]
    };
    let a = if psi(0.0) <= 0.0 {
        0.0
    } else if psi(amax) >= 0.0 {
        amax
    } else {
        bisect_root(0.0, amax, psi, 200)
    };
    let best = point(a.clamp(0.0, amax));
    if certify {
        let fb = c.eval(&best);
        let slack = 1e-12 * (1.0 + fb.abs());
        for i in 0..=64 {
            let q = point(amax * i as f64 / 64.0);
            if c.eval(&q) > fb + slack {
                return Err(CfmmError::NonConcaveFunction(c.name().to_string()));
            }
        }
    }
    Ok(vec![best[0], best[1].max(0.0)])
}

/// Maximizes `c` over `{x >= 0, p.x = k}` by projected gradient ascent on the
/// budget simplex from three starts, also comparing every vertex.
fn maximize_on_budget(c: &CustomFunction, prices: &[f64], k: f64) -> Vec<f64> {
    let n = prices.len();
    if k <= 0.0 {
        return vec![0.0; n];
    }
    let to_x = |u: &[f64]| -> Vec<f64> { u.iter().zip(prices).map(|(ui, p)| ui * k / p).collect() };
    let phi = |u: &[f64]| c.eval(&to_x(u));
    let grad = |u: &[f64]| -> Vec<f64> {
        let g = numeric_gradient(&|x: &[f64]| c.eval(x), &to_x(u));
        g.iter().zip(prices).map(|(gi, p)| gi * k / p).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut starts = vec![vec![1.0 / n as f64; n]];
    for _ in 0..2 {
        let raw: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
        let s: f64 = raw.iter().sum();
        starts.push(raw.iter().map(|v| v / s).collect());
    }
    let mut best_u = starts[0].clone();
    let mut best_v = phi(&best_u);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let v = phi(&e);
        if v > best_v {
            best_v = v;
            best_u = e;
        }
    }
    for start in starts {
        let mut u = start;
        let mut val = phi(&u);
        let mut step = 1.0;
        for _ in 0..4000 {
            let g = grad(&u);
            let mean = g.iter().sum::<f64>() / n as f64;
            let g: Vec<f64> = g.iter().map(|v| v - mean).collect();
            let gn = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if gn.is_nan() || gn <= 0.0 {
                break;
            }
            let mut moved = false;
            let mut s = step * 2.0 / gn;
            for _ in 0..60 {
                let cand: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui + s * gi).collect();
                let cand = project_simplex(&cand);
                let lin: f64 = g.iter().zip(&cand).zip(&u).map(|((gi, ci), ui)| gi * (ci - ui)).sum();
                let cv = phi(&cand);
                if cv >= val + 1e-4 * lin && lin >= 0.0 {
                    let change = cand.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    u = cand;
                    val = cv;
                    step = s * gn;
                    moved = change > 1e-13;
                    break;
                }
                s *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if val > best_v {
            best_v = val;
            best_u = u;
        }
    }
    to_x(&best_u)
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, si) in s.iter().enumerate() {
        cum += si;
        let t = (cum - 1.0) / (i + 1) as f64;
        if si - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn density_demand(pair: &DensityPair, reserves: &[f64], prices: &[f64]) -> DemandResponse {
    let t = prices[0] / prices[1];
    let (lo, hi) = (pair.forward.cumulative(t), pair.forward.cumulative_right(t));
    let (delta, ends) = if hi > 0.0 {
        let at = |s: f64| vec![-s, s * t];
        (at(lo), if hi > lo { Some([at(lo), at(hi)]) } else { None })
    } else {
        let q = 1.0 / t;
        let (lo, hi) = (pair.reverse.cumulative(q), pair.reverse.cumulative_right(q));
        let at = |s: f64| vec![s * q, -s];
        (at(lo), if hi > lo { Some([at(lo), at(hi)]) } else { None })
    };
    let new_reserves: Vec<f64> = reserves.iter().zip(&delta).map(|(r, d)| r + d).collect();
    DemandResponse { new_reserves, delta, spot_after: None, interval: ends, post_fee: None }
}

fn fee_demand(w: &FeeWrapper, reserves: &[f64], prices: &[f64]) -> Result<DemandResponse, CfmmError> {
    if reserves.len() != 2 {
        return Err(CfmmError::Unsupported("fee wrapper on more than two assets".into()));
    }
    let keep = 1.0 - w.eps;
    let map = |d: &[f64]| -> Vec<f64> {
        if d[0] < 0.0 {
            vec![d[0], d[1] / keep]
        } else if d[0] > 0.0 {
            vec![d[0] / keep, d[1]]
        } else {
            d.to_vec()
        }
    };
    let sell = demand_response(&w.inner, &w.base, &[prices[0] * keep, prices[1]])?;
    let raw = if sell.delta[0] < 0.0 {
        Some(sell)
    } else {
        let buy = demand_response(&w.inner, &w.base, &[prices[0], prices[1] * keep])?;
        if buy.delta[0] > 0.0 || w.eps == 0.0 { Some(buy) } else { None }
    };
    let (delta, interval) = match raw {
        Some(r) => (map(&r.delta), r.interval.map(|[a, b]| [map(&a), map(&b)])),
        None => (vec![0.0, 0.0], None),
    };
    let new_reserves: Vec<f64> = w.base.iter().zip(&delta).map(|(r, d)| r + d).collect();
    let f = TradingFunction::Fee(Box::new(w.clone()));
    let spot_after = spot_valuations(&f, &new_reserves).ok();
    let post_fee = Some(w.chi(&new_reserves));
    Ok(DemandResponse { new_reserves, delta, spot_after, interval, post_fee })
}

/// Wraps `f` so that it charges `eps` on net inflows relative to `reserves_hat`.
pub fn apply_fee_wrapper(f: &TradingFunction, reserves_hat: &[f64], eps: f64) -> Result<TradingFunction, CfmmError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(CfmmError::InvalidFee(eps));
    }
    if f.arity() != Some(2) || matches!(f, TradingFunction::Fee(_)) {
        return Err(CfmmError::Unsupported("fees apply to two-asset functions without a fee".into()));
    }
    check_len(f, reserves_hat.len())?;
    Ok(TradingFunction::Fee(Box::new(FeeWrapper { inner: f.clone(), base: reserves_hat.to_vec(), eps })))
}

/// Net trade of a limit offer: the segment from the smallest to the largest optimal fill.
#[derive(Debug, Clone, PartialEq)]
pub struct OfferDemand {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl OfferDemand {
    pub fn is_set_valued(&self) -> bool {
        self.lo != self.hi
    }

    pub fn at(&self, theta: f64) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| l + theta * (h - l)).collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.at(0.5)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Offer<'a> {
    Sell(&'a LimitSellOffer),
    Buy(&'a LimitBuyOffer),
}

/// Response of a limit offer to full-length `prices`.
pub fn offer_demand(offer: Offer<'_>, prices: &[f64]) -> OfferDemand {
    let n = prices.len();
    let (s, b, limit, sold, bought) = match offer {
        Offer::Sell(o) => {
            let rho = prices[o.sell.0] / prices[o.buy.0];
            (o.sell.0, o.buy.0, o.min_price, o.amount, o.amount * rho)
        }
        Offer::Buy(o) => {
            let rho = prices[o.sell.0] / prices[o.buy.0];
            let (sold, bought) = if o.target < o.endowment * rho { (o.target / rho, o.target) } else { (o.endowment, o.endowment * rho) };
            (o.sell.0, o.buy.0, o.limit_rate(), sold, bought)
        }
    };
    let rho = prices[s] / prices[b];
    let zero = vec![0.0; n];
    let mut full = vec![0.0; n];
    full[s] = -sold;
    full[b] = bought;
    if ties(rho, limit) {
        OfferDemand { lo: zero, hi: full }
    } else if rho > limit {
        OfferDemand { lo: full.clone(), hi: full }
    } else {
        OfferDemand { lo: zero.clone(), hi: zero }
    }
}
