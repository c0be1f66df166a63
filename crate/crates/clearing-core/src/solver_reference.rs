//! Two-asset equilibria by bisection or dense scan of the excess demand for the first asset.

use thiserror::Error;

use crate::cfmm::{demand_response, offer_demand, spot_rate, CfmmError, Offer, TradingFunction};
use crate::density::density_from_function;
use crate::market_core::{BatchInstance, BatchSolution, CfmmDecl, LimitBuyOffer, LimitSellOffer, Participant, PriceVector};
use crate::verifier::verify_solution;

pub const REFERENCE_VERIFY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("expected 2 assets, got {0}")]
    WrongArity(usize),
    #[error("no equilibrium found: {0}")]
    NoEquilibriumFound(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Cfmm(#[from] CfmmError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptions {
    pub grid_points: usize,
    /// Relative width at which bisection stops.
    pub rate_tol: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { grid_points: 1_000_000, rate_tol: 1e-15 }
    }
}

/// Net trade segment of one participant at rate `rho = p_A / p_B`.
#[derive(Debug, Clone, PartialEq)]
struct Segment {
    lo: [f64; 2],
    hi: [f64; 2],
}

/// Two-asset form of an offer's response; matches [`offer_demand`].
fn offer_segment(sell: usize, rho: f64, limit: f64, sold: f64, bought: f64) -> Segment {
    let mut full = [0.0; 2];
    full[sell] = -sold;
    full[1 - sell] = bought;
    if rho > limit {
        Segment { lo: full, hi: full }
    } else if rho < limit {
        Segment { lo: [0.0; 2], hi: [0.0; 2] }
    } else {
        Segment { lo: [0.0; 2], hi: full }
    }
}

/// Participants with their effective trading functions built once.
enum Prepared<'a> {
    Sell(&'a LimitSellOffer),
    Buy(&'a LimitBuyOffer),
    Cfmm(&'a CfmmDecl, TradingFunction),
}

struct Market<'a> {
    parts: Vec<Prepared<'a>>,
}

impl<'a> Market<'a> {
    fn new(inst: &'a BatchInstance) -> Result<Self, ReferenceError> {
        let parts = inst
            .participants
            .iter()
            .map(|p| {
                Ok(match p {
                    Participant::LimitSell(o) => Prepared::Sell(o),
                    Participant::LimitBuy(o) => Prepared::Buy(o),
                    Participant::Cfmm(c) => Prepared::Cfmm(c, c.effective_function()?),
                })
            })
            .collect::<Result<_, ReferenceError>>()?;
        Ok(Self { parts })
    }

    fn segment(part: &Prepared<'_>, prices: &[f64; 2]) -> Result<Segment, ReferenceError> {
        Ok(match part {
            Prepared::Sell(o) => {
                let rho = prices[o.sell.0] / prices[o.buy.0];
                offer_segment(o.sell.0, rho, o.min_price, o.amount, o.amount * rho)
            }
            Prepared::Buy(o) => {
                let rho = prices[o.sell.0] / prices[o.buy.0];
                let (sold, bought) = if o.target < o.endowment * rho { (o.target / rho, o.target) } else { (o.endowment, o.endowment * rho) };
                offer_segment(o.sell.0, rho, o.limit_rate(), sold, bought)
            }
            Prepared::Cfmm(c, f) => {
                let local = c.local_prices(prices);
                let r = demand_response(f, &c.reserves, &local)?;
                let put = |d: &[f64]| {
                    let mut v = [0.0; 2];
                    for (a, x) in c.assets.iter().zip(d) {
                        v[a.0] += x;
                    }
                    v
                };
                match r.interval {
                    Some([a, b]) => Segment { lo: put(&a), hi: put(&b) },
                    None => {
                        let v = put(&r.delta);
                        Segment { lo: v, hi: v }
                    }
                }
            }
        })
    }

    fn segments(&self, rho: f64) -> Result<Vec<Segment>, ReferenceError> {
        let prices = [rho, 1.0];
        self.parts.iter().map(|p| Self::segment(p, &prices)).collect()
    }

    fn excess(&self, rho: f64) -> Result<(f64, f64), ReferenceError> {
        let prices = [rho, 1.0];
        let mut lo = 0.0;
        let mut hi = 0.0;
        for p in &self.parts {
            let s = Self::segment(p, &prices)?;
            lo += s.lo[0].min(s.hi[0]);
            hi += s.lo[0].max(s.hi[0]);
        }
        Ok((lo, hi))
    }
}

/// Interval of aggregate excess demand for the first asset at rate `rho`.
pub fn excess_interval(inst: &BatchInstance, rho: f64) -> Result<(f64, f64), ReferenceError> {
    Market::new(inst)?.excess(rho)
}

fn sign_at(market: &Market<'_>, rho: f64, eps: f64) -> Result<i8, ReferenceError> {
    let (lo, hi) = market.excess(rho)?;
    Ok(if lo > eps {
        1
    } else if hi < -eps {
        -1
    } else {
        0
    })
}

/// Rates where some participant's response jumps.
fn breakpoints(inst: &BatchInstance) -> Vec<f64> {
    let mut out = Vec::new();
    for part in &inst.participants {
        match part {
            Participant::LimitSell(o) => out.push(if o.sell.0 == 0 { o.min_price } else { 1.0 / o.min_price }),
            Participant::LimitBuy(o) => out.push(if o.sell.0 == 0 { o.limit_rate() } else { 1.0 / o.limit_rate() }),
            Participant::Cfmm(c) => {
                let Ok(f) = c.effective_function() else { continue };
                let flip = c.assets[0].0 != 0;
                let orient = |r: f64| if flip { 1.0 / r } else { r };
                let jumpy = match &f {
                    TradingFunction::ConstantSum { .. } | TradingFunction::DensityPair(_) => true,
                    TradingFunction::Fee(w) => matches!(w.inner, TradingFunction::ConstantSum { .. } | TradingFunction::DensityPair(_)),
                    _ => false,
                };
                if jumpy {
                    if let Ok(pair) = density_from_function(&f, &c.reserves) {
                        out.extend(pair.forward.jump_list().iter().map(|j| orient(j.rate)));
                        out.extend(pair.reverse.jump_list().iter().map(|j| orient(1.0 / j.rate)));
                    }
                }
            }
        }
    }
    out.retain(|r| r.is_finite() && *r > 0.0);
    out
}

fn spots(inst: &BatchInstance) -> Vec<f64> {
    let mut out = Vec::new();
    for part in &inst.participants {
        if let Participant::Cfmm(c) = part {
            if let Ok(f) = c.effective_function() {
                if let Ok(r) = spot_rate(&f, &c.reserves) {
                    if r.is_finite() && r > 0.0 {
                        out.push(if c.assets[0].0 == 0 { r } else { 1.0 / r });
                    }
                }
            }
        }
    }
    out
}

fn scan_range(inst: &BatchInstance) -> (f64, f64) {
    let cands: Vec<f64> = breakpoints(inst).into_iter().chain(spots(inst)).collect();
    if cands.is_empty() {
        return (1e-4, 1e4);
    }
    let lo = cands.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cands.iter().cloned().fold(0.0, f64::max);
    (lo / 1e4, hi * 1e4)
}

/// Whether excess demand is known to fall as the rate rises.
fn monotone(inst: &BatchInstance) -> bool {
    inst.participants.iter().all(|part| match part {
        Participant::LimitSell(_) => true,
        Participant::LimitBuy(_) => false,
        Participant::Cfmm(c) => {
            let Ok(f) = c.effective_function() else { return false };
            let inner = match &f {
                TradingFunction::Fee(w) => &w.inner,
                other => other,
            };
            match inner {
                TradingFunction::Lmsr | TradingFunction::Custom(_) => false,
                TradingFunction::DensityPair(p) => p.forward.is_monotone() && p.reverse.is_monotone(),
                _ => true,
            }
        }
    })
}

/// Boundary inside `[a, b]` where the sign leaves `s`, refined to `rate_tol`.
fn refine(market: &Market<'_>, mut a: f64, mut b: f64, s: i8, eps: f64, rate_tol: f64) -> Result<(f64, f64), ReferenceError> {
    for _ in 0..400 {
        let mid = (a * b).sqrt();
        if !(mid > a && mid < b) || b / a - 1.0 <= rate_tol {
            break;
        }
        if sign_at(market, mid, eps)? == s {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((a, b))
}

/// Equilibrium rate candidates: every boundary between regions of opposite excess demand sign.
pub fn equilibrium_rates(inst: &BatchInstance, opts: &ReferenceOptions) -> Result<Vec<f64>, ReferenceError> {
    if inst.n_assets() != 2 {
        return Err(ReferenceError::WrongArity(inst.n_assets()));
    }
    let market = Market::new(inst)?;
    let scale = inst.scale();
    let eps = 1e-13 * scale[0];
    let (lo, hi) = scan_range(inst);
    let jumps = breakpoints(inst);
    let snap = |a: f64, b: f64| -> f64 {
        jumps.iter().copied().find(|r| *r >= a * (1.0 - 1e-12) && *r <= b * (1.0 + 1e-12)).unwrap_or(b)
    };
    let mut brackets: Vec<(f64, f64, i8)> = Vec::new();
    let mut seen_pos = false;
    let mut seen_neg = false;
    if monotone(inst) {
        let sl = sign_at(&market, lo, eps)?;
        let sh = sign_at(&market, hi, eps)?;
        seen_pos = sl > 0;
        seen_neg = sh < 0;
        if seen_pos && seen_neg {
            brackets.push((lo, hi, 1));
        }
    } else {
        let n = opts.grid_points.max(2);
        let step = (hi / lo).ln() / (n - 1) as f64;
        let mut last: Option<(f64, i8)> = None;
        for k in 0..n {
            let rho = lo * (step * k as f64).exp();
            let s = sign_at(&market, rho, eps)?;
            if s == 0 {
                continue;
            }
            seen_pos |= s > 0;
            seen_neg |= s < 0;
            if let Some((r0, s0)) = last {
                if s0 != s {
                    brackets.push((r0, rho, s0));
                }
            }
            last = Some((rho, s));
        }
    }
    if !(seen_pos && seen_neg) {
        let side = if seen_pos { "only excess demand" } else if seen_neg { "only excess supply" } else { "no excess on either side" };
        return Err(ReferenceError::NoEquilibriumFound(format!("{side} for {} between rates {lo:e} and {hi:e}", inst.assets[0])));
    }
    let mut rates = Vec::new();
    for (a, b, s) in brackets {
        let (a, b) = refine(&market, a, b, s, eps, opts.rate_tol)?;
        rates.push(snap(a, b));
    }
    Ok(rates)
}

/// Trades at `rho` with every set-valued participant filled at one common fraction.
fn fills_at(inst: &BatchInstance, rho: f64) -> Result<Vec<Vec<f64>>, ReferenceError> {
    let segs = Market::new(inst)?.segments(rho)?;
    let base: f64 = segs.iter().map(|s| s.lo[0]).sum();
    let span: f64 = segs.iter().map(|s| s.hi[0] - s.lo[0]).sum();
    let t = if span != 0.0 { (-base / span).clamp(0.0, 1.0) } else { 0.0 };
    Ok(segs.iter().map(|s| vec![s.lo[0] + t * (s.hi[0] - s.lo[0]), s.lo[1] + t * (s.hi[1] - s.lo[1])]).collect())
}

pub fn solve_two_asset(inst: &BatchInstance, opts: &ReferenceOptions) -> Result<BatchSolution, ReferenceError> {
    let rates = equilibrium_rates(inst, opts)?;
    let rho = rates[0];
    let trades = fills_at(inst, rho)?;
    let mut sol = BatchSolution {
        prices: PriceVector::new(vec![rho, 1.0]).map_err(|e| ReferenceError::NoEquilibriumFound(e.to_string()))?.normalized(),
        trades,
        objective_value: None,
        iterations: 0,
        solver: "reference".into(),
        verifier_report: Vec::new(),
    };
    if let Ok(r) = verify_solution(inst, &sol, REFERENCE_VERIFY_TOL) {
        sol.verifier_report = r.checks;
    }
    Ok(sol)
}

/// Outcome of scanning rates under the rule that a CFMM's trading function must stay exactly constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LegacyReport {
    pub rates_scanned: usize,
    /// Rates at which the offers clear among themselves with the CFMM idle.
    pub zero_trade_rates: Vec<f64>,
    /// `(rate, amount of the first asset the CFMM sells)` for every feasible nonzero CFMM trade.
    pub nonzero_points: Vec<(f64, f64)>,
}

impl LegacyReport {
    pub fn zero_trade_feasible(&self) -> bool {
        !self.zero_trade_rates.is_empty()
    }

    pub fn only_zero_trade(&self) -> bool {
        self.nonzero_points.is_empty()
    }
}

/// Nonzero `t` with `f(a0 - t, b0 + rho t) = f(a0, b0)`.
fn level_roots(f: &TradingFunction, a0: f64, b0: f64, rho: f64) -> Vec<f64> {
    if let TradingFunction::ConstantProduct = f {
        let t = a0 - b0 / rho;
        return if t != 0.0 { vec![t] } else { Vec::new() };
    }
    let Some(f0) = f.value(&[a0, b0]) else { return Vec::new() };
    let phi = |t: f64| f.value(&[a0 - t, b0 + rho * t]).unwrap_or(f64::NAN) - f0;
    let (lo, hi) = (-b0 / rho, a0);
    let n = 2000;
    let mut roots = Vec::new();
    let mut prev = (lo, phi(lo));
    for k in 1..=n {
        let t = lo + (hi - lo) * k as f64 / n as f64;
        let v = phi(t);
        if prev.1.is_finite() && v.is_finite() && (prev.1 > 0.0) != (v > 0.0) {
            let r = crate::numeric::bisect_root(prev.0, t, phi, 200);
            if r.abs() > 1e-9 * (a0 + b0 / rho) {
                roots.push(r);
            }
        }
        prev = (t, v);
    }
    roots
}

/// Scans rates for CFMM trades that keep the trading function exactly constant and that the offers can absorb.
pub fn legacy_exact_constant_check(inst: &BatchInstance) -> Result<LegacyReport, ReferenceError> {
    if inst.n_assets() != 2 {
        return Err(ReferenceError::WrongArity(inst.n_assets()));
    }
    let cfmms: Vec<(usize, &CfmmDecl)> = inst
        .participants
        .iter()
        .enumerate()
        .filter_map(|(i, p)| if let Participant::Cfmm(c) = p { Some((i, c)) } else { None })
        .collect();
    if cfmms.len() != 1 {
        return Err(ReferenceError::Unsupported(format!("expected one CFMM, got {}", cfmms.len())));
    }
    let (ci, c) = cfmms[0];
    let f = c.effective_function()?;
    if !f.is_value_defined() {
        return Err(ReferenceError::Unsupported(format!("{} has no function value to hold constant", f.name())));
    }
    let flip = c.assets[0].0 != 0;
    let oriented = if flip {
        swap_function(&f).ok_or_else(|| ReferenceError::Unsupported(format!("{} cannot be reoriented", f.name())))?
    } else {
        f.clone()
    };
    let (a0, b0) = if flip { (c.reserves[1], c.reserves[0]) } else { (c.reserves[0], c.reserves[1]) };
    let scale = inst.scale();
    let eps = 1e-9 * scale[0];

    let mut rates: Vec<f64> = breakpoints(inst);
    rates.extend(spots(inst));
    let (lo, hi) = scan_range(inst);
    let (lo, hi) = (lo * 10.0, hi / 10.0);
    let n = 20_000;
    rates.extend((0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)));
    rates.sort_by(|a, b| a.total_cmp(b));
    rates.dedup();

    let offers = |rho: f64| {
        let prices = [rho, 1.0];
        let (mut olo, mut ohi) = (0.0, 0.0);
        for (i, part) in inst.participants.iter().enumerate() {
            let d = match part {
                _ if i == ci => continue,
                Participant::LimitSell(o) => offer_demand(Offer::Sell(o), &prices),
                Participant::LimitBuy(o) => offer_demand(Offer::Buy(o), &prices),
                Participant::Cfmm(_) => continue,
            };
            olo += d.lo[0].min(d.hi[0]);
            ohi += d.lo[0].max(d.hi[0]);
        }
        (olo, ohi)
    };
    // Sign of the offers' excess demand for the first asset net of the CFMM selling `v` of it.
    let side = |rho: f64, v: f64| {
        let (olo, ohi) = offers(rho);
        if olo > v + eps {
            1i8
        } else if ohi < v - eps {
            -1
        } else {
            0
        }
    };
    let single_root = |rho: f64| {
        let roots = level_roots(&oriented, a0, b0, rho);
        if roots.len() == 1 { Some(roots[0]) } else { None }
    };

    let zero_trade_rates = scan_feasible(&rates, |_| Some(0.0), &side).into_iter().map(|(r, _)| r).collect();
    let mut nonzero_points: Vec<(f64, f64)> = scan_feasible(&rates, single_root, &side).into_iter().filter(|(_, t)| t.abs() > eps).collect();
    for &rho in &rates {
        let roots = level_roots(&oriented, a0, b0, rho);
        if roots.len() > 1 {
            nonzero_points.extend(roots.into_iter().filter(|t| side(rho, *t) == 0).map(|t| (rho, t)));
        }
    }
    Ok(LegacyReport { rates_scanned: rates.len(), zero_trade_rates, nonzero_points })
}

/// Rates where `side(rate, trade(rate))` is zero, either on the grid or at a sign change between neighbours.
fn scan_feasible(rates: &[f64], trade: impl Fn(f64) -> Option<f64>, side: &impl Fn(f64, f64) -> i8) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut prev: Option<(f64, i8)> = None;
    for &rho in rates {
        let Some(v) = trade(rho) else {
            prev = None;
            continue;
        };
        let s = side(rho, v);
        if s == 0 {
            out.push((rho, v));
        } else if let Some((r0, s0)) = prev {
            if s0 == -s {
                let stays = |m: f64| trade(m).map(|v| side(m, v) == s0).unwrap_or(false);
                let edge = crate::numeric::bisect_last_true_log(r0, rho, stays, 200);
                let next = edge * (1.0 + 1e-15);
                if let Some(v) = trade(next) {
                    out.push((next, v));
                }
            }
        }
        prev = if s == 0 { None } else { Some((rho, s)) };
    }
    out
}

/// The same function with its two arguments exchanged, for the families that allow it.
fn swap_function(f: &TradingFunction) -> Option<TradingFunction> {
    match f {
        TradingFunction::ConstantProduct | TradingFunction::Lmsr => Some(f.clone()),
        TradingFunction::WeightedProduct { wa, wb } => Some(TradingFunction::WeightedProduct { wa: *wb, wb: *wa }),
        TradingFunction::ConstantSum { rate } => Some(TradingFunction::ConstantSum { rate: 1.0 / rate }),
        TradingFunction::Monomial { exponents } => Some(TradingFunction::Monomial { exponents: exponents.iter().rev().cloned().collect() }),
        _ => None,
    }
}
