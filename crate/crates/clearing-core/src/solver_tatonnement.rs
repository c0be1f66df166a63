//! Multiplicative price adjustment driven by aggregate demand queries.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cfmm::{demand_response, offer_demand, CfmmError, Offer, TradingFunction};
use crate::market_core::{BatchInstance, BatchSolution, CfmmDecl, Participant, PriceVector};
use crate::verifier::verify_solution;

pub const TATONNEMENT_VERIFY_TOL: f64 = 1e-5;
/// Relative distance to a limit rate within which a participant's fill is left free.
const MARGINAL: f64 = 1e-7;
/// Relative distance from the final rate within which limit rates are tried as exact candidates.
const SNAP_WINDOW: f64 = 3e-2;
const MAX_PINS: usize = 6;
const PIN_ROUNDS: usize = 3;
const REFINE_STEP: f64 = 0.1;
const REFINE_ITERS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TatonnementError {
    #[error("participant {participant} unsupported: {reason}")]
    UnsupportedParticipant { participant: usize, reason: String },
    #[error("excess demand {residual:e} above tolerance after {iterations} iterations")]
    NotConverged { best: Box<BatchSolution>, residual: f64, iterations: usize },
    #[error(transparent)]
    Cfmm(#[from] CfmmError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TatonnementOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_iters: usize,
    /// Largest accepted `|Z_a| / scale_a`.
    pub tol: f64,
}

impl Default for TatonnementOptions {
    fn default() -> Self {
        Self { initial_step: 0.5, min_step: 1e-12, max_iters: 200_000, tol: 1e-6 }
    }
}

/// A participant's optimal net trades: the segment from `lo` to `hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Response {
    fn point(v: Vec<f64>) -> Self {
        Self { lo: v.clone(), hi: v }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| a + t * (b - a)).collect()
    }

    pub fn is_set_valued(&self) -> bool {
        self.lo != self.hi
    }
}

fn embed(c: &CfmmDecl, local: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (a, v) in c.assets.iter().zip(local) {
        out[a.0] += v;
    }
    out
}

fn check_supported(inst: &BatchInstance) -> Result<(), TatonnementError> {
    for (i, part) in inst.participants.iter().enumerate() {
        if let Participant::LimitBuy(_) = part {
            return Err(TatonnementError::UnsupportedParticipant { participant: i, reason: "limit buy offers are not substitutes".into() });
        }
    }
    Ok(())
}

fn cfmm_response(c: &CfmmDecl, p: &[f64], n: usize, widen: bool) -> Result<Response, TatonnementError> {
    let f = c.effective_function()?;
    let mut local = c.local_prices(p);
    if widen && local.len() == 2 {
        if let TradingFunction::ConstantSum { rate } = f {
            if (local[0] / local[1] / rate - 1.0).abs() <= MARGINAL {
                local[0] = rate * local[1];
            }
        }
    }
    let r = demand_response(&f, &c.reserves, &local)?;
    Ok(match r.interval {
        Some([a, b]) => Response { lo: embed(c, &a, n), hi: embed(c, &b, n) },
        None => Response::point(embed(c, &r.delta, n)),
    })
}

/// Responses of every participant at `p`; with `widen`, offers within a relative
/// `1e-7` of their limit rate may fill anywhere between zero and in full.
pub fn responses(inst: &BatchInstance, p: &[f64], widen: bool) -> Result<Vec<Response>, TatonnementError> {
    check_supported(inst)?;
    let n = inst.n_assets();
    inst.participants
        .iter()
        .map(|part| match part {
            Participant::LimitSell(o) => {
                let d = offer_demand(Offer::Sell(o), p);
                let rho = p[o.sell.0] / p[o.buy.0];
                if widen && (rho / o.min_price - 1.0).abs() <= MARGINAL {
                    let mut full = vec![0.0; n];
                    full[o.sell.0] = -o.amount;
                    full[o.buy.0] = o.amount * rho;
                    Ok(Response { lo: vec![0.0; n], hi: full })
                } else {
                    Ok(Response { lo: d.lo, hi: d.hi })
                }
            }
            Participant::LimitBuy(_) => unreachable!("rejected above"),
            Participant::Cfmm(c) => cfmm_response(c, p, n, widen),
        })
        .collect()
}

/// Excess demand per asset at `p`, taking the midpoint of set-valued responses.
pub fn aggregate_demand(inst: &BatchInstance, p: &[f64]) -> Result<Vec<f64>, TatonnementError> {
    let mut z = vec![0.0; inst.n_assets()];
    for r in responses(inst, p, false)? {
        for (acc, v) in z.iter_mut().zip(r.at(0.5)) {
            *acc += v;
        }
    }
    Ok(z)
}

/// Fill fractions of the set-valued responses that bring the scaled excess demand closest to zero.
fn feasibility_pass(resp: &[Response], scale: &[f64]) -> Vec<f64> {
    let n = scale.len();
    let mut t: Vec<f64> = resp.iter().map(|r| if r.is_set_valued() { 0.5 } else { 0.0 }).collect();
    let dirs: Vec<Vec<f64>> = resp.iter().map(|r| r.hi.iter().zip(&r.lo).zip(scale).map(|((h, l), s)| (h - l) / s).collect()).collect();
    let mut z = vec![0.0; n];
    for (r, ti) in resp.iter().zip(&t) {
        for (j, v) in r.at(*ti).iter().enumerate() {
            z[j] += v / scale[j];
        }
    }
    for _ in 0..500 {
        let mut change: f64 = 0.0;
        for (k, r) in resp.iter().enumerate() {
            if !r.is_set_valued() {
                continue;
            }
            let d = &dirs[k];
            let dd: f64 = d.iter().map(|v| v * v).sum();
            if dd == 0.0 {
                continue;
            }
            let zd: f64 = z.iter().zip(d).map(|(a, b)| a * b).sum();
            let new = (t[k] - zd / dd).clamp(0.0, 1.0);
            let delta = new - t[k];
            if delta != 0.0 {
                for (zj, dj) in z.iter_mut().zip(d) {
                    *zj += delta * dj;
                }
                t[k] = new;
                change = change.max(delta.abs());
            }
        }
        if change < 1e-16 {
            break;
        }
    }
    t
}

fn scaled_residual(z: &[f64], scale: &[f64]) -> f64 {
    z.iter().zip(scale).map(|(a, s)| (a / s).abs()).fold(0.0, f64::max)
}

/// Price and fills at `p` after the fill pass, with the resulting residual.
/// Trades after the fill pass at `p`, and the excess they leave per asset.
fn settle(inst: &BatchInstance, p: &[f64], scale: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>), TatonnementError> {
    let resp = responses(inst, p, true)?;
    let t = feasibility_pass(&resp, scale);
    let trades: Vec<Vec<f64>> = resp.iter().zip(&t).map(|(r, ti)| r.at(*ti)).collect();
    let mut z = vec![0.0; scale.len()];
    for tr in &trades {
        for (a, v) in z.iter_mut().zip(tr) {
            *a += v;
        }
    }
    Ok((trades, z))
}

/// A rate `p_a / p_b` some participant is indifferent at.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Pin {
    a: usize,
    b: usize,
    rate: f64,
}

/// Offer limits and constant-sum rates within relative `window` of the current rates.
fn nearby_pins(inst: &BatchInstance, p: &[f64], window: f64) -> Vec<Pin> {
    let mut out: Vec<Pin> = Vec::new();
    for part in &inst.participants {
        let pin = match part {
            Participant::LimitSell(o) => Pin { a: o.sell.0, b: o.buy.0, rate: o.min_price },
            Participant::Cfmm(c) if c.assets.len() == 2 => match c.effective_function() {
                Ok(TradingFunction::ConstantSum { rate }) => Pin { a: c.assets[0].0, b: c.assets[1].0, rate },
                _ => continue,
            },
            _ => continue,
        };
        let near = (p[pin.a] / p[pin.b] / pin.rate - 1.0).abs() <= window;
        let known = out.iter().any(|q| (q.a, q.b, q.rate) == (pin.a, pin.b, pin.rate) || (q.a, q.b, q.rate) == (pin.b, pin.a, 1.0 / pin.rate));
        if near && !known {
            out.push(pin);
        }
    }
    out
}

fn root(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Group of each asset when pinned pairs are merged, or `None` if a pin closes a cycle.
fn pin_groups(pins: &[Pin], n: usize) -> Option<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    for pin in pins {
        let (ra, rb) = (root(&mut parent, pin.a), root(&mut parent, pin.b));
        if ra == rb {
            return None;
        }
        parent[ra] = rb;
    }
    Some((0..n).map(|j| root(&mut parent, j)).collect())
}

/// The prices nearest `p` in log distance whose ratios match `pins` exactly.
fn snap(p: &[f64], pins: &[Pin]) -> Option<Vec<f64>> {
    let n = p.len();
    let u = DVector::from_iterator(n, p.iter().map(|v| v.ln()));
    let mut c = DMatrix::zeros(pins.len(), n);
    let mut d = DVector::zeros(pins.len());
    for (k, pin) in pins.iter().enumerate() {
        c[(k, pin.a)] = 1.0;
        c[(k, pin.b)] = -1.0;
        d[k] = pin.rate.ln();
    }
    let g = (&c * c.transpose()).try_inverse()?;
    let snapped = &u - c.transpose() * (g * (&c * &u - d));
    let q: Vec<f64> = snapped.iter().map(|v| v.exp()).collect();
    if q.iter().all(|v| v.is_finite() && *v > 0.0) {
        Some(q)
    } else {
        None
    }
}

/// A maximal subset of `pins` with independent ratios, in order.
fn spanning_forest(pins: &[Pin], n: usize) -> Vec<Pin> {
    let mut forest = Vec::new();
    for pin in pins {
        let mut trial = forest.clone();
        trial.push(*pin);
        if pin_groups(&trial, n).is_some() {
            forest = trial;
        }
    }
    forest
}

/// `p` with the ratio of every pin in `forest` set exactly, walking out from each tree's first asset.
fn snap_exact(p: &[f64], forest: &[Pin]) -> Vec<f64> {
    let n = p.len();
    let mut q = p.to_vec();
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(j) = stack.pop() {
            for pin in forest {
                let (next, price) = if pin.a == j && !seen[pin.b] {
                    (pin.b, q[j] / pin.rate)
                } else if pin.b == j && !seen[pin.a] {
                    (pin.a, q[j] * pin.rate)
                } else {
                    continue;
                };
                q[next] = price;
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    q
}

/// Price adjustment with the pinned ratios held fixed: each group of pinned assets moves
/// as one on its value excess, and the fill pass settles flows inside groups.
fn refine(inst: &BatchInstance, p0: &[f64], groups: &[usize], scale: &[f64], opts: &TatonnementOptions) -> Result<(f64, Vec<f64>), TatonnementError> {
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut lambda = vec![REFINE_STEP; n];
    let mut last_sign = vec![0i8; n];
    let mut best = (f64::INFINITY, p.clone());
    for _ in 0..REFINE_ITERS {
        let (_, z) = settle(inst, &p, scale)?;
        let res = scaled_residual(&z, scale);
        if res < best.0 {
            best = (res, p.clone());
        }
        if res <= opts.tol {
            break;
        }
        let mut value = vec![0.0; n];
        let mut size = vec![0.0; n];
        for j in 0..n {
            value[groups[j]] += p[j] * z[j];
            size[groups[j]] += p[j] * scale[j];
        }
        let mut factor = vec![1.0; n];
        for g in (0..n).filter(|&g| size[g] > 0.0) {
            let r = value[g] / size[g];
            let sign = if r > 0.0 { 1 } else if r < 0.0 { -1 } else { 0 };
            if sign != 0 && last_sign[g] != 0 && sign != last_sign[g] {
                lambda[g] *= 0.5;
            } else if sign == last_sign[g] {
                lambda[g] = (lambda[g] * 1.1).min(REFINE_STEP);
            }
            if sign != 0 {
                last_sign[g] = sign;
            }
            factor[g] = 1.0 + lambda[g] * r.clamp(-0.5, 0.5);
        }
        if lambda.iter().all(|l| *l < opts.min_step) {
            break;
        }
        for j in 0..n {
            p[j] *= factor[groups[j]];
        }
        let m = p.iter().cloned().fold(f64::INFINITY, f64::min);
        for v in p.iter_mut() {
            *v /= m;
        }
    }
    Ok(best)
}

/// Best prices found by refining every independent subset of the pins near `p`, over a few rounds.
fn pinned_search(inst: &BatchInstance, p: &[f64], scale: &[f64], opts: &TatonnementOptions) -> Result<(f64, Vec<f64>), TatonnementError> {
    let n = p.len();
    let mut best = (f64::INFINITY, p.to_vec());
    for _ in 0..PIN_ROUNDS {
        let pins = nearby_pins(inst, &best.1, SNAP_WINDOW);
        let k = pins.len().min(MAX_PINS);
        let start = best.1.clone();
        for mask in 1u32..(1u32 << k) {
            let subset: Vec<Pin> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| pins[i]).collect();
            let Some(groups) = pin_groups(&subset, n) else { continue };
            let Some(q) = snap(&start, &subset) else { continue };
            let found = refine(inst, &q, &groups, scale, opts)?;
            if found.0 < best.0 {
                best = found;
            }
            if best.0 <= opts.tol {
                return Ok(best);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TatonnementRow {
    pub iter: usize,
    pub residual: f64,
    pub step: f64,
}

pub fn solve_tatonnement(inst: &BatchInstance, opts: &TatonnementOptions) -> Result<BatchSolution, TatonnementError> {
    solve_tatonnement_traced(inst, opts).map(|(s, _)| s)
}

pub fn solve_tatonnement_traced(inst: &BatchInstance, opts: &TatonnementOptions) -> Result<(BatchSolution, Vec<TatonnementRow>), TatonnementError> {
    check_supported(inst)?;
    let n = inst.n_assets();
    let scale = inst.scale();
    let mut p = vec![1.0; n];
    let mut lambda = vec![opts.initial_step; n];
    let mut last_sign = vec![0i8; n];
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, p.clone());
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        iterations = it;
        let z = aggregate_demand(inst, &p)?;
        let res = scaled_residual(&z, &scale);
        let step = lambda.iter().cloned().fold(0.0, f64::max);
        trace.push(TatonnementRow { iter: it, residual: res, step });
        if res < best.0 {
            best = (res, p.clone());
        }
        if res <= opts.tol || step < opts.min_step {
            break;
        }
        for a in 0..n {
            let r = z[a] / scale[a];
            let sign = if r > 0.0 { 1 } else if r < 0.0 { -1 } else { 0 };
            if sign != 0 && last_sign[a] != 0 && sign != last_sign[a] {
                lambda[a] *= 0.5;
            } else if sign == last_sign[a] {
                lambda[a] = (lambda[a] * 1.1).min(opts.initial_step);
            }
            if sign != 0 {
                last_sign[a] = sign;
            }
            p[a] *= 1.0 + lambda[a] * r.clamp(-0.5, 0.5);
        }
        let m = p.iter().cloned().fold(f64::INFINITY, f64::min);
        for v in p.iter_mut() {
            *v /= m;
        }
    }
    let mut chosen: Option<(f64, Vec<f64>)> = None;
    for q in [p, best.1] {
        let res = scaled_residual(&settle(inst, &q, &scale)?.1, &scale);
        if chosen.as_ref().map(|c| res < c.0).unwrap_or(true) {
            chosen = Some((res, q));
        }
    }
    let (mut res, mut q) = chosen.expect("at least one candidate");
    if res > opts.tol {
        let found = pinned_search(inst, &q, &scale, opts)?;
        if found.0 < res {
            (res, q) = found;
        }
    }
    let forest = spanning_forest(&nearby_pins(inst, &q, MARGINAL), n);
    if !forest.is_empty() {
        let groups = pin_groups(&forest, n).expect("forest pins are independent");
        let exact = snap_exact(&q, &forest);
        let (exact_res, exact) = refine(inst, &exact, &groups, &scale, opts)?;
        if exact_res <= res.max(opts.tol) {
            (res, q) = (exact_res, exact);
        }
    }
    let trades = settle(inst, &q, &scale)?.0;
    let mut sol = BatchSolution {
        prices: PriceVector::new(q).expect("positive prices").normalized(),
        trades,
        objective_value: None,
        iterations,
        solver: "tatonnement".into(),
        verifier_report: Vec::new(),
    };
    if let Ok(r) = verify_solution(inst, &sol, TATONNEMENT_VERIFY_TOL) {
        sol.verifier_report = r.checks;
    }
    if res <= opts.tol {
        Ok((sol, trace))
    } else {
        Err(TatonnementError::NotConverged { best: Box::new(sol), residual: res, iterations })
    }
}
