//! Named checks over an (instance, solution) pair.

use thiserror::Error;

use crate::cfmm::{demand_response, spot_rate, spot_valuations, TradingFunction};
use crate::market_core::{BatchInstance, BatchSolution, CfmmDecl, CheckResult, LimitBuyOffer, LimitSellOffer, Participant};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifierError {
    #[error("solution has {got} trades for {expected} participants")]
    IncompleteSolution { expected: usize, got: usize },
    #[error("trade {participant} has {got} entries for {expected} assets")]
    TradeShape { participant: usize, expected: usize, got: usize },
}

pub const UNIFORM_RATES: &str = "uniform_rates";
pub const CONSERVATION: &str = "conservation";
pub const CFMM_NONDECREASING: &str = "cfmm_nondecreasing";
pub const INDEPENDENT_RESPONSE: &str = "independent_response";
pub const SPOT_ALIGNMENT: &str = "spot_alignment";
pub const OFFER_LIMITS: &str = "offer_limits";

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierReport {
    pub checks: Vec<CheckResult>,
}

impl VerifierReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    /// Largest residual over the applicable checks.
    pub fn max_residual(&self) -> f64 {
        self.checks.iter().filter(|c| c.applicable).map(|c| c.residual).fold(0.0, f64::max)
    }
}

/// Running worst case of one check across participants.
struct Tally {
    name: &'static str,
    tol: f64,
    worst: f64,
    applicable: bool,
    detail: String,
}

impl Tally {
    fn new(name: &'static str, tol: f64) -> Self {
        Self { name, tol, worst: 0.0, applicable: false, detail: String::new() }
    }

    fn record(&mut self, residual: f64, what: impl FnOnce() -> String) {
        self.applicable = true;
        let r = if residual.is_nan() { f64::INFINITY } else { residual };
        if r > self.worst || (self.detail.is_empty() && r >= self.worst) {
            self.worst = r;
            self.detail = what();
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: !self.applicable || self.worst <= self.tol,
            residual: self.worst,
            applicable: self.applicable,
            detail: if self.applicable { self.detail } else { "not applicable".into() },
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs every check at relative tolerance `tol`.
pub fn verify_solution(inst: &BatchInstance, sol: &BatchSolution, tol: f64) -> Result<VerifierReport, VerifierError> {
    let n = inst.n_assets();
    if sol.trades.len() != inst.participants.len() {
        return Err(VerifierError::IncompleteSolution { expected: inst.participants.len(), got: sol.trades.len() });
    }
    for (i, t) in sol.trades.iter().enumerate() {
        if t.len() != n {
            return Err(VerifierError::TradeShape { participant: i, expected: n, got: t.len() });
        }
    }
    let p = sol.prices.values();
    let scale = inst.scale();
    let mut uniform = Tally::new(UNIFORM_RATES, tol);
    let mut conservation = Tally::new(CONSERVATION, tol);
    let mut nondecreasing = Tally::new(CFMM_NONDECREASING, tol);
    let mut independent = Tally::new(INDEPENDENT_RESPONSE, tol);
    let mut alignment = Tally::new(SPOT_ALIGNMENT, tol);
    let mut limits = Tally::new(OFFER_LIMITS, tol);

    let total_value = dot(p, &scale);
    for (i, (part, d)) in inst.participants.iter().zip(&sol.trades).enumerate() {
        let wealth = dot(p, &part.endowment(n)).max(1e-12 * total_value);
        uniform.record(dot(p, d).abs() / wealth, || format!("participant {i}"));
        match part {
            Participant::LimitSell(o) => limits.record(sell_residual(o, p, d), || format!("participant {i}")),
            Participant::LimitBuy(o) => limits.record(buy_residual(o, p, d), || format!("participant {i}")),
            Participant::Cfmm(c) => check_cfmm(i, c, p, d, &mut nondecreasing, &mut independent, &mut alignment),
        }
    }
    for j in 0..n {
        let flow: f64 = sol.trades.iter().map(|t| t[j]).sum();
        conservation.record(flow.abs() / scale[j], || format!("asset {}", inst.assets[j]));
    }
    Ok(VerifierReport {
        checks: vec![uniform.finish(), conservation.finish(), nondecreasing.finish(), independent.finish(), alignment.finish(), limits.finish()],
    })
}

fn sell_residual(o: &LimitSellOffer, p: &[f64], d: &[f64]) -> f64 {
    let sold = -d[o.sell.0];
    let bought = d[o.buy.0];
    let rho = p[o.sell.0] / p[o.buy.0];
    let k = o.amount.max(1e-300);
    let mut r = (sold - o.amount).max(0.0) / k;
    r = r.max((-sold).max(0.0) / k).max((-bought).max(0.0) / (k * rho));
    let others = d.iter().enumerate().filter(|(j, _)| *j != o.sell.0 && *j != o.buy.0).map(|(_, v)| v.abs()).fold(0.0, f64::max);
    r = r.max(others / k);
    if sold > 0.0 {
        r = r.max((sold * o.min_price - bought).max(0.0) / (k * o.min_price));
    }
    if rho > o.min_price * (1.0 + 1e-12) {
        r = r.max((o.amount - sold).max(0.0) / k);
    }
    r
}

fn buy_residual(o: &LimitBuyOffer, p: &[f64], d: &[f64]) -> f64 {
    let sold = -d[o.sell.0];
    let bought = d[o.buy.0];
    let rho = p[o.sell.0] / p[o.buy.0];
    let unit = o.endowment.max(o.target / rho).max(1e-300);
    let mut r = (sold - o.endowment).max(0.0) / unit;
    r = r.max((bought - o.target).max(0.0) / (unit * rho));
    r = r.max((-sold).max(0.0) / unit).max((-bought).max(0.0) / (unit * rho));
    if sold > 0.0 {
        r = r.max((sold * o.limit_rate() - bought).max(0.0) / (unit * o.limit_rate()));
    }
    if rho > o.limit_rate() * (1.0 + 1e-12) {
        let want = o.target.min(o.endowment * rho);
        r = r.max((want - bought).max(0.0) / (unit * rho));
    }
    r
}

fn check_cfmm(
    i: usize,
    c: &CfmmDecl,
    p: &[f64],
    d: &[f64],
    nondecreasing: &mut Tally,
    independent: &mut Tally,
    alignment: &mut Tally,
) {
    let who = || format!("cfmm {} (participant {i})", c.id);
    let local_p = c.local_prices(p);
    let delta: Vec<f64> = c.assets.iter().map(|a| d[a.0]).collect();
    let outside = d.iter().enumerate().filter(|(j, _)| !c.assets.iter().any(|a| a.0 == *j)).map(|(_, v)| v.abs()).fold(0.0, f64::max);
    let unit = c.reserves.iter().zip(&local_p).map(|(r, q)| r * q).sum::<f64>().max(1e-300);
    let new: Vec<f64> = c.reserves.iter().zip(&delta).map(|(r, x)| r + x).collect();
    let f = match c.effective_function() {
        Ok(f) => f,
        Err(e) => {
            independent.record(f64::INFINITY, || format!("{}: {e}", who()));
            return;
        }
    };

    let negative = new.iter().zip(&local_p).map(|(x, q)| (-x).max(0.0) * q).fold(0.0, f64::max) / unit;
    let drop = match (f.value(&c.reserves), f.value(&new.iter().map(|v| v.max(0.0)).collect::<Vec<_>>())) {
        (Some(before), Some(after)) => ((before - after) / (1.0 + before.abs())).max(0.0),
        _ => 0.0,
    };
    nondecreasing.record(negative.max(drop) + outside / unit, who);

    match demand_response(&f, &c.reserves, &local_p) {
        Ok(resp) => {
            let dist = resp.distance(&delta);
            let norm = c.reserves.iter().cloned().fold(0.0, f64::max).max(1e-300);
            independent.record(dist / norm, who);
        }
        Err(e) => independent.record(f64::INFINITY, || format!("{}: {e}", who())),
    }

    let traded = delta.iter().zip(&local_p).map(|(x, q)| (x * q).abs()).fold(0.0, f64::max) > 1e-12 * unit;
    let applies = match &f {
        TradingFunction::DensityPair(_) => false,
        TradingFunction::Fee(_) => traded,
        other => traded || other.is_strictly_quasi_concave(),
    };
    if !applies {
        return;
    }
    match spot_valuations(&f, &new) {
        Ok(v) => alignment.record(kkt_residual(&v, &local_p, &new), who),
        Err(e) => alignment.record(f64::INFINITY, || format!("{}: {e}", who())),
    }
}

/// Deviation of `v` from proportionality with `p` on held assets, and from
/// `v_i / p_i <= lambda` on assets the reserves are empty of.
///
/// Holdings worth under `1e-12` of the total count as empty.
fn kkt_residual(v: &[f64], p: &[f64], x: &[f64]) -> f64 {
    let ratios: Vec<f64> = v.iter().zip(p).map(|(a, b)| a / b).collect();
    let worth = dot(x, p);
    let is_held = |j: usize| x[j] * p[j] > 1e-12 * worth;
    let held: Vec<usize> = (0..x.len()).filter(|&j| is_held(j)).collect();
    if held.is_empty() {
        return 0.0;
    }
    let lambda = held.iter().map(|&j| ratios[j]).fold(0.0, f64::max);
    if lambda.is_nan() || lambda <= 0.0 {
        return f64::INFINITY;
    }
    let mut r: f64 = 0.0;
    for (j, ratio) in ratios.iter().enumerate().take(x.len()) {
        let dev = ratio / lambda - 1.0;
        r = r.max(if is_held(j) { dev.abs() } else { dev.max(0.0) });
    }
    r
}

/// Pre-batch spot, batch rate and post-batch spot of one CFMM asset pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NoBeyondEntry {
    pub cfmm: String,
    pub pair: (usize, usize),
    pub pre_spot: f64,
    pub batch_rate: f64,
    pub post_spot: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoBeyondReport {
    pub entries: Vec<NoBeyondEntry>,
}

impl NoBeyondReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

/// Checks that every CFMM's post-batch spot rate lies between its pre-batch spot and the batch rate.
pub fn check_nobeyond(inst: &BatchInstance, sol: &BatchSolution) -> NoBeyondReport {
    let p = sol.prices.values();
    let mut entries = Vec::new();
    for (i, part) in inst.participants.iter().enumerate() {
        let Participant::Cfmm(c) = part else { continue };
        let Ok(f) = c.effective_function() else { continue };
        let Some(d) = sol.trades.get(i) else { continue };
        let new: Vec<f64> = c.assets.iter().zip(&c.reserves).map(|(a, r)| r + d[a.0]).collect();
        let (Ok(before), Ok(after)) = (spot_valuations(&f, &c.reserves), spot_valuations(&f, &new)) else { continue };
        for u in 0..c.assets.len() {
            for w in (u + 1)..c.assets.len() {
                let pre = before[u] / before[w];
                let post = after[u] / after[w];
                let rate = p[c.assets[u].0] / p[c.assets[w].0];
                let lo = pre.min(rate) * (1.0 - 1e-9);
                let hi = pre.max(rate) * (1.0 + 1e-9);
                entries.push(NoBeyondEntry {
                    cfmm: c.id.clone(),
                    pair: (c.assets[u].0, c.assets[w].0),
                    pre_spot: pre,
                    batch_rate: rate,
                    post_spot: post,
                    passed: post >= lo && post <= hi,
                });
            }
        }
    }
    NoBeyondReport { entries }
}

/// Spot rate of a two-asset CFMM at the given reserves, if defined.
pub fn cfmm_spot_rate(c: &CfmmDecl, reserves: &[f64]) -> Option<f64> {
    let f = c.effective_function().ok()?;
    spot_rate(&f, reserves).ok()
}
