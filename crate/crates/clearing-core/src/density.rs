//! Two-asset CFMMs viewed as collections of limit orders: the cumulative
//! amount sold at each rate, its inverse, and the integral used by the convex program.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::cfmm::{demand_response, spot_rate, CfmmError, TradingFunction};
use crate::market_core::AssetId;
use crate::numeric::{adaptive_simpson, bisect_last_true_log, golden_max};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("amount {x} outside [0, {total}]")]
    OutOfRange { x: f64, total: f64 },
    #[error("sold amount does not settle as the rate grows")]
    UnboundedDensity,
    #[error("forward zero {forward} below reciprocal reverse zero {reverse}")]
    InconsistentDensities { forward: f64, reverse: f64 },
    #[error("invalid density: {0}")]
    Invalid(String),
    #[error("density needs a two-asset function, got {0}")]
    Unsupported(String),
    #[error(transparent)]
    Cfmm(#[from] CfmmError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub rate: f64,
    pub size: f64,
}

type Sampler = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A density given by a sampled demand curve, frozen at its maximum.
#[derive(Clone)]
pub struct SmoothDensity {
    raw: Sampler,
    peak: f64,
}

impl fmt::Debug for SmoothDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothDensity").field("peak", &self.peak).finish()
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    Empty,
    /// `D(p) = max(0, alpha - beta / p)`.
    Hyperbolic { alpha: f64, beta: f64 },
    /// Sorted discontinuities; `D(p)` sums sizes with rate strictly below `p`.
    Jumps(Vec<Jump>),
    Smooth(SmoothDensity),
    /// Piecewise-linear interpolation of a tabulated curve, constant past the end.
    Table { rates: Vec<f64>, cumulative: Vec<f64> },
}

/// One direction of a two-asset CFMM: how much of `sell` it gives up at each rate.
#[derive(Debug, Clone)]
pub struct HalfDensity {
    pub sell: AssetId,
    pub buy: AssetId,
    shape: Shape,
    total: f64,
    spot: f64,
    decreasing_from: Option<f64>,
}

impl HalfDensity {
    fn build(shape: Shape) -> Result<Self, DensityError> {
        let (total, spot) = match &shape {
            Shape::Empty => (0.0, f64::INFINITY),
            Shape::Hyperbolic { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && *alpha >= 0.0 && *beta >= 0.0) {
                    return Err(DensityError::Invalid(format!("hyperbolic ({alpha}, {beta})")));
                }
                if *alpha == 0.0 {
                    return Self::build(Shape::Empty);
                }
                (*alpha, beta / alpha)
            }
            Shape::Jumps(jumps) => {
                if jumps.is_empty() {
                    return Self::build(Shape::Empty);
                }
                (jumps.iter().map(|j| j.size).sum(), jumps[0].rate)
            }
            Shape::Smooth(s) => {
                let total = (s.raw)(s.peak).max(0.0);
                (total, f64::NAN)
            }
            Shape::Table { rates, cumulative } => (*cumulative.last().unwrap_or(&0.0), rates.first().copied().unwrap_or(f64::INFINITY)),
        };
        Ok(Self { sell: AssetId(0), buy: AssetId(1), shape, total, spot, decreasing_from: None })
    }

    pub fn empty() -> Self {
        Self { sell: AssetId(0), buy: AssetId(1), shape: Shape::Empty, total: 0.0, spot: f64::INFINITY, decreasing_from: None }
    }

    pub fn hyperbolic(alpha: f64, beta: f64) -> Result<Self, DensityError> {
        Self::build(Shape::Hyperbolic { alpha, beta })
    }

    pub fn jumps(raw: &[(f64, f64)]) -> Result<Self, DensityError> {
        let mut jumps: Vec<Jump> = Vec::new();
        for &(rate, size) in raw {
            if !(rate > 0.0 && rate.is_finite() && size >= 0.0 && size.is_finite()) {
                return Err(DensityError::Invalid(format!("jump ({rate}, {size})")));
            }
            if size > 0.0 {
                jumps.push(Jump { rate, size });
            }
        }
        jumps.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        let mut merged: Vec<Jump> = Vec::with_capacity(jumps.len());
        for j in jumps {
            match merged.last_mut() {
                Some(last) if last.rate == j.rate => last.size += j.size,
                _ => merged.push(j),
            }
        }
        Self::build(Shape::Jumps(merged))
    }

    pub fn table(rates: Vec<f64>, cumulative: Vec<f64>) -> Result<Self, DensityError> {
        if rates.len() != cumulative.len() || rates.is_empty() {
            return Err(DensityError::Invalid("table rates and amounts differ in length".into()));
        }
        let ok_rates = rates.iter().all(|r| *r > 0.0 && r.is_finite()) && rates.windows(2).all(|w| w[0] < w[1]);
        let ok_cum = cumulative.iter().all(|c| *c >= 0.0 && c.is_finite()) && cumulative.windows(2).all(|w| w[0] <= w[1]);
        if !ok_rates || !ok_cum {
            return Err(DensityError::Invalid("table must be increasing in rate and nondecreasing in amount".into()));
        }
        if cumulative[0] != 0.0 {
            return Err(DensityError::Invalid("table must start at amount 0".into()));
        }
        if *cumulative.last().unwrap() == 0.0 {
            return Ok(Self::empty());
        }
        let first = cumulative.iter().position(|c| *c > 0.0).unwrap();
        let rates = rates[first - 1..].to_vec();
        let cumulative = cumulative[first - 1..].to_vec();
        Self::build(Shape::Table { rates, cumulative })
    }

    /// Density sampled from `raw`, which is zero up to `spot`.
    fn smooth(raw: Sampler, spot: f64) -> Result<Self, DensityError> {
        const DECADES: f64 = 12.0;
        const STEPS: usize = 600;
        let lo = spot.ln();
        let grid: Vec<f64> = (0..=STEPS).map(|i| lo + DECADES * std::f64::consts::LN_10 * i as f64 / STEPS as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|u| raw(u.exp())).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(DensityError::UnboundedDensity);
        }
        let (imax, vmax) = vals.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        if vmax <= 0.0 {
            return Ok(Self::empty());
        }
        let peak = if imax == STEPS {
            grid[STEPS].exp()
        } else {
            let a = grid[imax.saturating_sub(1)];
            let b = grid[imax + 1];
            let u = golden_max(|u| raw(u.exp()), a, b, 200);
            if raw(u.exp()) >= vmax { u.exp() } else { grid[imax].exp() }
        };
        let mut h = Self::build(Shape::Smooth(SmoothDensity { raw: raw.clone(), peak }))?;
        h.spot = spot;
        let tail = vals[STEPS];
        if tail < h.total * (1.0 - 1e-9) {
            h.decreasing_from = Some(peak);
        }
        Ok(h)
    }

    pub fn with_assets(mut self, sell: AssetId, buy: AssetId) -> Self {
        self.sell = sell;
        self.buy = buy;
        self
    }

    /// The density of the same curve when every quoted rate is multiplied by `keep` before use.
    pub fn rescaled(&self, keep: f64) -> Self {
        let shape = match &self.shape {
            Shape::Empty => Shape::Empty,
            Shape::Hyperbolic { alpha, beta } => Shape::Hyperbolic { alpha: *alpha, beta: beta / keep },
            Shape::Jumps(js) => Shape::Jumps(js.iter().map(|j| Jump { rate: j.rate / keep, size: j.size }).collect()),
            Shape::Smooth(s) => {
                let raw = s.raw.clone();
                Shape::Smooth(SmoothDensity { raw: Arc::new(move |p| raw(p * keep)), peak: s.peak / keep })
            }
            Shape::Table { rates, cumulative } => Shape::Table { rates: rates.iter().map(|r| r / keep).collect(), cumulative: cumulative.clone() },
        };
        Self {
            sell: self.sell,
            buy: self.buy,
            shape,
            total: self.total,
            spot: self.spot / keep,
            decreasing_from: self.decreasing_from.map(|p| p / keep),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// `D⁻¹(0)`: the rate below which nothing is sold.
    pub fn spot(&self) -> f64 {
        self.spot
    }

    pub fn is_empty(&self) -> bool {
        self.total <= 0.0
    }

    /// Rate past which the underlying demand falls again, for curves that are not monotone.
    pub fn decreasing_from(&self) -> Option<f64> {
        self.decreasing_from
    }

    pub fn is_monotone(&self) -> bool {
        self.decreasing_from.is_none()
    }

    /// Halves whose optimality conditions are linear in prices and amounts.
    pub fn is_rational_linear(&self) -> bool {
        matches!(self.shape, Shape::Empty | Shape::Hyperbolic { .. } | Shape::Jumps(_))
    }

    pub fn jump_list(&self) -> &[Jump] {
        match &self.shape {
            Shape::Jumps(js) => js,
            _ => &[],
        }
    }

    /// `D(p)`, the amount sold at rate `p` (left limit at a jump).
    pub fn cumulative(&self, p: f64) -> f64 {
        match &self.shape {
            Shape::Empty => 0.0,
            Shape::Hyperbolic { alpha, beta } => {
                if p <= self.spot { 0.0 } else { (alpha - beta / p).max(0.0) }
            }
            Shape::Jumps(js) => js.iter().take_while(|j| j.rate < p).map(|j| j.size).sum(),
            Shape::Smooth(s) => {
                if p <= self.spot {
                    0.0
                } else {
                    (s.raw)(p.min(s.peak)).clamp(0.0, self.total)
                }
            }
            Shape::Table { rates, cumulative } => table_eval(rates, cumulative, p),
        }
    }

    /// Right limit of `D` at `p`: equal to `D(p)` except at a jump.
    pub fn cumulative_right(&self, p: f64) -> f64 {
        match &self.shape {
            Shape::Jumps(js) => js.iter().take_while(|j| j.rate <= p).map(|j| j.size).sum(),
            _ => self.cumulative(p),
        }
    }

    /// `d(p)`, the marginal density (jumps excluded).
    pub fn marginal(&self, p: f64) -> f64 {
        match &self.shape {
            Shape::Empty | Shape::Jumps(_) => 0.0,
            Shape::Hyperbolic { beta, .. } => {
                if p <= self.spot { 0.0 } else { beta / (p * p) }
            }
            _ => {
                let h = 1e-6 * p;
                (self.cumulative(p + h) - self.cumulative(p - h)) / (2.0 * h)
            }
        }
    }

    fn check_range(&self, x: f64) -> Result<(), DensityError> {
        if x < 0.0 || x > self.total * (1.0 + 1e-12) || x.is_nan() {
            Err(DensityError::OutOfRange { x, total: self.total })
        } else {
            Ok(())
        }
    }

    /// `sup { p : D(p) <= x }`.
    pub fn inverse(&self, x: f64) -> Result<f64, DensityError> {
        self.check_range(x)?;
        if x >= self.total {
            return Ok(f64::INFINITY);
        }
        Ok(match &self.shape {
            Shape::Empty => f64::INFINITY,
            Shape::Hyperbolic { alpha, beta } => beta / (alpha - x),
            Shape::Jumps(js) => {
                let mut acc = 0.0;
                for j in js {
                    acc += j.size;
                    if acc > x {
                        return Ok(j.rate);
                    }
                }
                f64::INFINITY
            }
            Shape::Smooth(s) => {
                if x <= 0.0 {
                    self.spot
                } else {
                    bisect_last_true_log(self.spot, s.peak, |p| self.cumulative(p) <= x, 200)
                }
            }
            Shape::Table { rates, cumulative } => table_inverse(rates, cumulative, x),
        })
    }

    /// `inf { p : D(p+) >= x }`: the inverse approached from below, finite at the total
    /// when the last unit is sold at a jump.
    pub fn inverse_left(&self, x: f64) -> Result<f64, DensityError> {
        self.check_range(x)?;
        match &self.shape {
            Shape::Jumps(js) if x > 0.0 => {
                let mut acc = 0.0;
                for j in js {
                    acc += j.size;
                    if acc >= x {
                        return Ok(j.rate);
                    }
                }
                Ok(js.last().map(|j| j.rate).unwrap_or(f64::INFINITY))
            }
            _ => self.inverse(x),
        }
    }

    /// `F(rho) = ∫₀^rho D(z)/z dz`.
    pub fn f_integral(&self, rho: f64) -> f64 {
        if rho.is_nan() || rho <= self.spot {
            return 0.0;
        }
        match &self.shape {
            Shape::Empty => 0.0,
            Shape::Hyperbolic { alpha, beta } => alpha * (rho / self.spot).ln() + beta * (1.0 / rho - 1.0 / self.spot),
            Shape::Jumps(js) => js.iter().filter(|j| j.rate < rho).map(|j| j.size * (rho / j.rate).ln()).sum(),
            Shape::Smooth(s) => {
                let top = rho.min(s.peak);
                let body = if top > self.spot {
                    adaptive_simpson(&|u: f64| self.cumulative(u.exp()), self.spot.ln(), top.ln(), 1e-12 * (1.0 + self.total))
                } else {
                    0.0
                };
                body + if rho > s.peak { self.total * (rho / s.peak).ln() } else { 0.0 }
            }
            Shape::Table { rates, cumulative } => {
                let mut acc = 0.0;
                for k in 0..rates.len() - 1 {
                    let (r0, r1) = (rates[k], rates[k + 1]);
                    if r0 >= rho {
                        break;
                    }
                    let top = r1.min(rho);
                    let m = (cumulative[k + 1] - cumulative[k]) / (r1 - r0);
                    acc += (cumulative[k] - m * r0) * (top / r0).ln() + m * (top - r0);
                }
                let last = *rates.last().unwrap();
                if rho > last {
                    acc += self.total * (rho / last).ln();
                }
                acc
            }
        }
    }

    /// `g(x) = ∫₀^{D⁻¹(x)} d(p) ln(1/p) dp`, jumps contributing their filled part.
    pub fn g_value(&self, x: f64) -> Result<f64, DensityError> {
        self.check_range(x)?;
        let x = x.min(self.total);
        if x <= 0.0 {
            return Ok(0.0);
        }
        Ok(match &self.shape {
            Shape::Empty => 0.0,
            Shape::Hyperbolic { alpha, beta } => {
                let rest = alpha - x;
                let tail = if rest > 0.0 { rest * rest.ln() } else { 0.0 };
                -x * beta.ln() + alpha * alpha.ln() - tail - x
            }
            Shape::Jumps(js) => {
                let mut remaining = x;
                let mut acc = 0.0;
                for j in js {
                    if remaining <= 0.0 {
                        break;
                    }
                    let take = j.size.min(remaining);
                    acc -= take * j.rate.ln();
                    remaining -= take;
                }
                acc
            }
            _ => {
                let rho = self.inverse_left(x)?;
                if rho.is_finite() {
                    self.f_integral(rho) - x * rho.ln()
                } else {
                    let top = match &self.shape {
                        Shape::Smooth(s) => s.peak,
                        Shape::Table { rates, .. } => *rates.last().unwrap(),
                        _ => unreachable!(),
                    };
                    self.f_integral(top) - x * top.ln()
                }
            }
        })
    }

    /// `g'(x) = ln(1 / D⁻¹(x))`, using the left limit at the total.
    pub fn g_derivative(&self, x: f64) -> Result<f64, DensityError> {
        let rho = if x >= self.total { self.inverse_left(x)? } else { self.inverse(x)? };
        Ok(-rho.ln())
    }
}

fn table_eval(rates: &[f64], cumulative: &[f64], p: f64) -> f64 {
    if p <= rates[0] {
        return 0.0;
    }
    let last = rates.len() - 1;
    if p >= rates[last] {
        return cumulative[last];
    }
    let k = rates.partition_point(|r| *r < p) - 1;
    let m = (cumulative[k + 1] - cumulative[k]) / (rates[k + 1] - rates[k]);
    cumulative[k] + m * (p - rates[k])
}

fn table_inverse(rates: &[f64], cumulative: &[f64], x: f64) -> f64 {
    let j = cumulative.partition_point(|c| *c <= x);
    if j >= cumulative.len() {
        return f64::INFINITY;
    }
    let k = j - 1;
    let m = (cumulative[j] - cumulative[k]) / (rates[j] - rates[k]);
    rates[k] + (x - cumulative[k]) / m
}

/// Both directions of a two-asset CFMM; `forward` sells asset 0 for asset 1.
#[derive(Debug, Clone)]
pub struct DensityPair {
    pub forward: HalfDensity,
    pub reverse: HalfDensity,
}

impl DensityPair {
    pub fn new(forward: HalfDensity, reverse: HalfDensity) -> Self {
        Self { forward: forward.with_assets(AssetId(0), AssetId(1)), reverse: reverse.with_assets(AssetId(1), AssetId(0)) }
    }

    pub fn check_crossing(&self) -> Result<(), DensityError> {
        let forward = self.forward.spot();
        let reverse = 1.0 / self.reverse.spot();
        if forward < reverse * (1.0 - 1e-12) {
            Err(DensityError::InconsistentDensities { forward, reverse })
        } else {
            Ok(())
        }
    }
}

/// Amount of asset `side` the function sells when the other asset is quoted at `1/rate` of it.
fn sold_at(f: &TradingFunction, reserves: &[f64], side: usize, rate: f64) -> Result<f64, CfmmError> {
    let prices = if side == 0 { [rate, 1.0] } else { [1.0, rate] };
    let r = demand_response(f, reserves, &prices)?;
    Ok((-r.delta[side]).max(0.0))
}

/// The pair of half densities of a two-asset function at the given reserves.
pub fn density_from_function(f: &TradingFunction, reserves: &[f64]) -> Result<DensityPair, DensityError> {
    if f.arity() != Some(2) || reserves.len() != 2 {
        return Err(DensityError::Unsupported(f.name()));
    }
    let (a0, b0) = (reserves[0], reserves[1]);
    let weighted = |wa: f64, wb: f64| -> Result<DensityPair, DensityError> {
        let theta = wa / (wa + wb);
        Ok(DensityPair::new(
            HalfDensity::hyperbolic((1.0 - theta) * a0, theta * b0)?,
            HalfDensity::hyperbolic(theta * b0, (1.0 - theta) * a0)?,
        ))
    };
    match f {
        TradingFunction::ConstantProduct => Ok(DensityPair::new(HalfDensity::hyperbolic(a0 / 2.0, b0 / 2.0)?, HalfDensity::hyperbolic(b0 / 2.0, a0 / 2.0)?)),
        TradingFunction::WeightedProduct { wa, wb } => weighted(*wa, *wb),
        TradingFunction::Monomial { exponents } => weighted(exponents[0], exponents[1]),
        TradingFunction::ConstantSum { rate } => Ok(DensityPair::new(HalfDensity::jumps(&[(*rate, a0)])?, HalfDensity::jumps(&[(1.0 / rate, b0)])?)),
        TradingFunction::Hspec { coeffs } if coeffs.iter().skip(1).all(|c| *c == 0.0) => {
            let c = coeffs[0];
            if c < 1.0 {
                return Err(CfmmError::DegenerateSpec { value: c, rate: 1.0 }.into());
            }
            Ok(DensityPair::new(
                HalfDensity::hyperbolic(a0 / c, b0 * (1.0 - 1.0 / c))?,
                HalfDensity::hyperbolic(b0 * (1.0 - 1.0 / c), a0 / c)?,
            ))
        }
        TradingFunction::Lmsr | TradingFunction::Hspec { .. } => {
            let halves = [0usize, 1].map(|side| -> Result<HalfDensity, DensityError> {
                let spot = side_spot(f, reserves, side)?;
                let g = f.clone();
                let r = reserves.to_vec();
                sold_at(f, reserves, side, spot * 2.0)?;
                HalfDensity::smooth(Arc::new(move |p| sold_at(&g, &r, side, p).unwrap_or(0.0)), spot)
            });
            let [fwd, rev] = halves;
            Ok(DensityPair::new(fwd?, rev?))
        }
        TradingFunction::Custom(_) => Ok(DensityPair::new(tabulate(f, reserves, 0)?, tabulate(f, reserves, 1)?)),
        TradingFunction::DensityPair(p) => Ok((**p).clone()),
        TradingFunction::Fee(w) => {
            let inner = density_from_function(&w.inner, &w.base)?;
            let keep = 1.0 - w.eps;
            Ok(DensityPair::new(inner.forward.rescaled(keep), inner.reverse.rescaled(keep)))
        }
    }
}

fn side_spot(f: &TradingFunction, reserves: &[f64], side: usize) -> Result<f64, DensityError> {
    match spot_rate(f, reserves) {
        Ok(r) if r > 0.0 && r.is_finite() => Ok(if side == 0 { r } else { 1.0 / r }),
        _ => {
            let p = bisect_last_true_log(1e-12, 1e12, |p| sold_at(f, reserves, side, p).map(|v| v <= 0.0).unwrap_or(true), 200);
            Ok(p)
        }
    }
}

const TABLE_POINTS: usize = 512;

fn tabulate(f: &TradingFunction, reserves: &[f64], side: usize) -> Result<HalfDensity, DensityError> {
    let spot = side_spot(f, reserves, side)?;
    let sample = |p: f64| sold_at(f, reserves, side, p);
    let mut far = spot;
    let mut prev = 0.0;
    let mut settled = None;
    for _ in 0..20 {
        far *= 10.0;
        let v = sample(far)?;
        if v >= reserves[side] * (1.0 - 1e-12) || (v > 0.0 && (v - prev).abs() <= 1e-9 * v) {
            settled = Some(v);
            break;
        }
        prev = v;
    }
    let limit = settled.ok_or(DensityError::UnboundedDensity)?;
    if limit <= 0.0 {
        return Ok(HalfDensity::empty());
    }
    let hi = bisect_last_true_log(spot, far, |p| sample(p).map(|v| v < 0.999 * limit).unwrap_or(false), 200);
    let mut rates = Vec::with_capacity(TABLE_POINTS + 1);
    let mut cumulative = Vec::with_capacity(TABLE_POINTS + 1);
    let mut running = 0.0f64;
    let mut decreasing_from = None;
    let step = (hi / spot).ln() / (TABLE_POINTS - 1) as f64;
    for i in 0..TABLE_POINTS {
        let p = if i == 0 { spot } else { spot * (step * i as f64).exp() };
        let v = if i == 0 { 0.0 } else { sample(p)? };
        if v < running * (1.0 - 1e-9) && decreasing_from.is_none() {
            decreasing_from = Some(p);
        }
        running = running.max(v);
        rates.push(p);
        cumulative.push(running);
    }
    if far > hi && limit > running {
        rates.push(far);
        cumulative.push(limit);
    }
    let mut h = HalfDensity::table(rates, cumulative)?;
    h.decreasing_from = decreasing_from;
    Ok(h)
}

/// `D⁻¹(x)` of a half density.
pub fn inverse_density(h: &HalfDensity, x: f64) -> Result<f64, DensityError> {
    h.inverse(x)
}

pub fn g_value(h: &HalfDensity, x: f64) -> Result<f64, DensityError> {
    h.g_value(x)
}

pub fn g_derivative(h: &HalfDensity, x: f64) -> Result<f64, DensityError> {
    h.g_derivative(x)
}

/// A trading function that trades exactly as the given pair of densities.
pub fn density_cfmm(pair: DensityPair) -> Result<TradingFunction, DensityError> {
    pair.check_crossing()?;
    Ok(TradingFunction::DensityPair(Arc::new(pair)))
}

/// Rows `(rate, D(rate), d(rate))` over a log-spaced grid around the half's active range.
pub fn density_rows(h: &HalfDensity, points: usize) -> Vec<(f64, f64, f64)> {
    let (lo, hi) = if h.spot().is_finite() && h.spot() > 0.0 {
        let top = match h.shape() {
            Shape::Smooth(s) => s.peak * 4.0,
            Shape::Table { rates, .. } => rates.last().unwrap() * 2.0,
            Shape::Jumps(js) => js.last().unwrap().rate * 4.0,
            _ => h.spot() * 100.0,
        };
        (h.spot() / 2.0, top)
    } else {
        (1e-3, 1e3)
    };
    let n = points.max(2);
    (0..n)
        .map(|i| {
            let p = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
            (p, h.cumulative(p), h.marginal(p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp() -> DensityPair {
        density_from_function(&TradingFunction::ConstantProduct, &[1.0, 10.0]).unwrap()
    }

    #[test]
    fn constant_product_density_at_40() {
        let p = cp();
        assert_eq!(p.forward.cumulative(40.0), 0.375);
        assert_eq!(p.forward.cumulative(10.0), 0.0);
        assert_eq!(p.forward.inverse(0.375).unwrap(), 40.0);
        assert_eq!(p.forward.inverse(0.0).unwrap(), 10.0);
    }

    #[test]
    fn constant_sum_jump() {
        let p = density_from_function(&TradingFunction::ConstantSum { rate: 2.0 }, &[5.0, 3.0]).unwrap();
        assert_eq!(p.forward.cumulative(2.5), 5.0);
        assert_eq!(p.forward.cumulative(1.5), 0.0);
        assert_eq!(p.forward.inverse(2.5).unwrap(), 2.0);
        assert!((p.forward.g_value(3.0).unwrap() - 3.0 * 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(p.forward.inverse_left(5.0).unwrap(), 2.0);
        assert!(p.forward.inverse(5.1).is_err());
    }

    #[test]
    fn g_derivative_matches_difference() {
        let h = cp().forward;
        let d = 1e-6;
        let fd = (h.g_value(0.2 + d).unwrap() - h.g_value(0.2 - d).unwrap()) / (2.0 * d);
        assert!((fd - h.g_derivative(0.2).unwrap()).abs() < 1e-5);
        assert_eq!(h.g_value(0.0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_g_matches_quadrature() {
        let h = cp().forward;
        let x = 0.3;
        let rho = h.inverse(x).unwrap();
        let quad = adaptive_simpson(&|p: f64| h.marginal(p) * (1.0 / p).ln(), h.spot(), rho, 1e-13);
        assert!((quad - h.g_value(x).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn lmsr_half_matches_demand() {
        let pair = density_from_function(&TradingFunction::Lmsr, &[1.0, 1.0]).unwrap();
        for p in [1.2, 2.0, 3.0] {
            let r = demand_response(&TradingFunction::Lmsr, &[1.0, 1.0], &[p, 1.0]).unwrap();
            assert!((pair.forward.cumulative(p) + r.delta[0]).abs() < 1e-12);
        }
        assert!((pair.forward.spot() - 1.0).abs() < 1e-15);
        let x = 0.5 * pair.forward.total();
        let rho = pair.forward.inverse(x).unwrap();
        assert!((pair.forward.cumulative(rho) - x).abs() < 1e-9);
    }

    #[test]
    fn custom_table_tracks_product() {
        let c = crate::cfmm::CustomFunction::from_expr("x*y", 2).unwrap();
        let pair = density_from_function(&TradingFunction::Custom(c), &[1.0, 10.0]).unwrap();
        assert!((pair.forward.cumulative(40.0) - 0.375).abs() < 1e-4);
        assert!(pair.forward.is_monotone());
    }

    #[test]
    fn crossing_condition() {
        let fwd = HalfDensity::jumps(&[(1.0, 1.0)]).unwrap();
        let rev = HalfDensity::jumps(&[(0.5, 1.0)]).unwrap();
        assert!(matches!(density_cfmm(DensityPair::new(fwd, rev)), Err(DensityError::InconsistentDensities { .. })));
    }

    #[test]
    fn fee_rescales_rates() {
        let f = crate::cfmm::apply_fee_wrapper(&TradingFunction::ConstantProduct, &[1.0, 10.0], 0.2).unwrap();
        let pair = density_from_function(&f, &[1.0, 10.0]).unwrap();
        let r = demand_response(&f, &[1.0, 10.0], &[40.0, 1.0]).unwrap();
        assert!((pair.forward.cumulative(40.0) + r.delta[0]).abs() < 1e-12);
        assert!((pair.forward.spot() - 12.5).abs() < 1e-12);
    }
}
