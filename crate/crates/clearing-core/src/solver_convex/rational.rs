use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::program::{Program, ProgramState};
use super::ConvexError;
use crate::density::Shape;
use crate::market_core::BatchInstance;

const PIN_TOLERANCE: f64 = 1e-7;

/// Exact prices, volumes and per-participant trades.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalSolution {
    pub prices: Vec<BigRational>,
    pub volumes: Vec<BigRational>,
    pub trades: Vec<Vec<BigRational>>,
}

impl RationalSolution {
    pub fn prices_f64(&self) -> Vec<f64> {
        self.prices.iter().map(to_f64).collect()
    }

    pub fn trades_f64(&self) -> Vec<Vec<f64>> {
        self.trades.iter().map(|t| t.iter().map(to_f64).collect()).collect()
    }

    /// Exact per-asset sum of all trades.
    pub fn clearing_residual(&self) -> Vec<BigRational> {
        let n = self.prices.len();
        (0..n).map(|j| self.trades.iter().fold(BigRational::zero(), |acc, t| acc + &t[j])).collect()
    }

    pub fn clears_exactly(&self) -> bool {
        self.clearing_residual().iter().all(|v| v.is_zero())
    }
}

pub fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Relative width, in units of the float spacing, within which a float is read as a simpler rational.
const SNAP_ULPS: f64 = 4.0;

/// The rational with the smallest denominator in `[lo, hi]`, for `0 < lo <= hi`.
fn simplest_between(lo: &BigRational, hi: &BigRational) -> BigRational {
    let f = lo.floor();
    if &f == lo {
        return f;
    }
    let c = lo.ceil();
    if &c <= hi {
        return c;
    }
    let inner = simplest_between(&(hi - &f).recip(), &(lo - &f).recip());
    f + inner.recip()
}

/// The simplest rational within a few float spacings of `v`.
fn exact(v: f64) -> Result<BigRational, ConvexError> {
    let q = BigRational::from_float(v).ok_or_else(|| ConvexError::ActiveSetError(format!("non-finite value {v}")))?;
    if v == 0.0 {
        return Ok(q);
    }
    let slack = BigRational::from_float(v.abs() * f64::EPSILON * SNAP_ULPS).unwrap_or_else(BigRational::zero);
    let a = q.abs();
    let lo = &a - &slack;
    if !lo.is_positive() {
        return Ok(q);
    }
    let s = simplest_between(&lo, &(&a + &slack));
    Ok(if v < 0.0 { -s } else { s })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sense {
    Eq,
    Ge,
}

/// One linear constraint `coeffs . v (= or >=) rhs` over `(p, y)`.
struct Row {
    coeffs: Vec<(usize, BigRational)>,
    sense: Sense,
    rhs: BigRational,
}

impl Row {
    fn eq(coeffs: Vec<(usize, BigRational)>, rhs: BigRational) -> Self {
        Self { coeffs, sense: Sense::Eq, rhs }
    }

    fn ge(coeffs: Vec<(usize, BigRational)>, rhs: BigRational) -> Self {
        Self { coeffs, sense: Sense::Ge, rhs }
    }
}

/// Dense simplex tableau in exact arithmetic; the last column holds the right-hand side.
struct Tableau {
    t: Vec<Vec<BigRational>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, enter: usize, cost: &mut [BigRational]) {
        let inv = self.t[r][enter].recip();
        for x in self.t[r].iter_mut() {
            *x *= &inv;
        }
        let pivot = self.t[r].clone();
        let eliminate = |row: &mut [BigRational]| {
            if !row[enter].is_zero() {
                let f = row[enter].clone();
                for (x, p) in row.iter_mut().zip(&pivot) {
                    *x -= &f * p;
                }
            }
        };
        for (k, row) in self.t.iter_mut().enumerate() {
            if k != r {
                eliminate(row);
            }
        }
        eliminate(cost);
        self.basis[r] = enter;
    }

    /// Pivots with Bland's rule over columns below `allowed` until no reduced cost is negative.
    /// Returns false when the objective is unbounded.
    fn optimize(&mut self, cost: &mut [BigRational], allowed: usize) -> bool {
        let w = self.width;
        loop {
            let Some(enter) = (0..allowed).find(|&j| cost[j].is_negative()) else { return true };
            let mut leave: Option<(usize, BigRational)> = None;
            for r in 0..self.t.len() {
                if self.t[r][enter].is_positive() {
                    let ratio = &self.t[r][w] / &self.t[r][enter];
                    let better = match &leave {
                        None => true,
                        Some((l, best)) => ratio < *best || (ratio == *best && self.basis[r] < self.basis[*l]),
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, enter, cost);
        }
    }
}

/// A point `v >= 0` satisfying every row that minimizes `sum |v_k - target_k|` over the targeted entries.
///
/// Exact two-phase simplex with Bland's rule.
fn closest_feasible_point(rows: &[Row], nvars: usize, targets: &[(usize, BigRational)]) -> Option<Vec<BigRational>> {
    let mut rows: Vec<Row> = rows.iter().map(|r| Row { coeffs: r.coeffs.clone(), sense: r.sense, rhs: r.rhs.clone() }).collect();
    let ndev = 2 * targets.len();
    for (k, (v, q)) in targets.iter().enumerate() {
        let d = nvars + 2 * k;
        rows.push(Row::eq(vec![(*v, BigRational::one()), (d, -BigRational::one()), (d + 1, BigRational::one())], q.clone()));
    }
    let nstruct = nvars + ndev;
    let m = rows.len();
    let slacks: Vec<usize> = (0..m).filter(|&r| rows[r].sense == Sense::Ge).collect();
    let artificial = nstruct + slacks.len();
    let width = artificial + m;
    let mut t: Vec<Vec<BigRational>> = Vec::with_capacity(m);
    for (r, row) in rows.iter().enumerate() {
        let mut v = vec![BigRational::zero(); width + 1];
        for (c, q) in &row.coeffs {
            v[*c] += q;
        }
        if let Some(k) = slacks.iter().position(|&s| s == r) {
            v[nstruct + k] = -BigRational::one();
        }
        v[width] = row.rhs.clone();
        if v[width].is_negative() {
            for x in v.iter_mut() {
                *x = -x.clone();
            }
        }
        v[artificial + r] = BigRational::one();
        t.push(v);
    }
    let mut tab = Tableau { t, basis: (artificial..width).collect(), width };

    let mut cost = vec![BigRational::zero(); width + 1];
    for row in &tab.t {
        for j in 0..artificial {
            cost[j] -= &row[j];
        }
        cost[width] -= &row[width];
    }
    tab.optimize(&mut cost, width);
    if !cost[width].is_zero() {
        return None;
    }
    let mut r = 0;
    while r < tab.t.len() {
        if tab.basis[r] >= artificial {
            match (0..artificial).find(|&j| !tab.t[r][j].is_zero()) {
                Some(j) => tab.pivot(r, j, &mut cost),
                None => {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    let mut cost = vec![BigRational::zero(); width + 1];
    for c in cost[nvars..nstruct].iter_mut() {
        *c = BigRational::one();
    }
    for (r, &b) in tab.basis.iter().enumerate() {
        if !cost[b].is_zero() {
            let f = cost[b].clone();
            for (x, p) in cost.iter_mut().zip(&tab.t[r]) {
                *x -= &f * p;
            }
        }
    }
    if !tab.optimize(&mut cost, artificial) {
        return None;
    }
    let mut v = vec![BigRational::zero(); nvars];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < nvars {
            v[b] = tab.t[r][width].clone();
        }
    }
    Some(v)
}

fn sum_sizes<'a>(js: impl Iterator<Item = &'a crate::density::Jump>) -> Result<BigRational, ConvexError> {
    js.into_iter().try_fold(BigRational::zero(), |acc, j| exact(j.size).map(|s| acc + s))
}

/// Exact equilibrium near `approx`, from the active set its prices suggest.
///
/// Rates within a relative `1e-7` of a jump or a spot rate are taken to sit on it. Among exact points
/// with that active set, the one nearest `approx` in summed absolute difference is returned.
pub fn extract_rational_from_state(inst: &BatchInstance, approx: &ProgramState) -> Result<RationalSolution, ConvexError> {
    let prog = Program::from_instance(inst)?;
    if let Some(h) = prog.halves.iter().find(|h| !h.density.is_rational_linear()) {
        return Err(ConvexError::NotRational(format!("participant {} has a density that is not piecewise linear in prices", h.owner)));
    }
    let n = prog.n;
    let hn = prog.halves.len();
    let p = &approx.p;
    let numeraire = (0..n).min_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
    let pv = |j: usize| j;
    let yv = |i: usize| n + i;
    let one = BigRational::one;
    let zero = BigRational::zero;

    let mut rows = vec![Row::eq(vec![(pv(numeraire), one())], one())];
    for j in 0..n {
        rows.push(Row::ge(vec![(pv(j), one())], one()));
        let mut coeffs = Vec::new();
        for (i, h) in prog.halves.iter().enumerate() {
            if h.sell == j {
                coeffs.push((yv(i), one()));
            }
            if h.buy == j {
                coeffs.push((yv(i), -one()));
            }
        }
        if !coeffs.is_empty() {
            rows.push(Row::eq(coeffs, zero()));
        }
    }
    for (i, h) in prog.halves.iter().enumerate() {
        let rho = prog.rate(i, p);
        let (a, b, y) = (pv(h.sell), pv(h.buy), yv(i));
        match h.density.shape() {
            Shape::Empty => rows.push(Row::eq(vec![(y, one())], zero())),
            Shape::Hyperbolic { alpha, beta } => {
                // Volume is `alpha p_A - beta p_B` above the spot rate and zero below it.
                let (qa, qb) = (exact(*alpha)?, exact(*beta)?);
                let gap = vec![(a, qa.clone()), (b, -qb.clone())];
                if (rho / h.density.spot() - 1.0).abs() <= PIN_TOLERANCE {
                    rows.push(Row::eq(gap, zero()));
                    rows.push(Row::eq(vec![(y, one())], zero()));
                } else if rho > h.density.spot() {
                    rows.push(Row::ge(gap, zero()));
                    rows.push(Row::eq(vec![(y, one()), (a, -qa), (b, qb)], zero()));
                } else {
                    rows.push(Row::ge(vec![(a, -qa), (b, qb)], zero()));
                    rows.push(Row::eq(vec![(y, one())], zero()));
                }
            }
            Shape::Jumps(js) => match js.iter().position(|j| (rho / j.rate - 1.0).abs() <= PIN_TOLERANCE) {
                Some(k) => {
                    let below = sum_sizes(js[..k].iter())?;
                    let upto = &below + exact(js[k].size)?;
                    rows.push(Row::eq(vec![(a, one()), (b, -exact(js[k].rate)?)], zero()));
                    rows.push(Row::ge(vec![(y, one()), (a, -below)], zero()));
                    rows.push(Row::ge(vec![(y, -one()), (a, upto)], zero()));
                }
                None => {
                    let filled = sum_sizes(js.iter().filter(|j| j.rate < rho))?;
                    for j in js {
                        let r = exact(j.rate)?;
                        let side = if j.rate < rho { one() } else { -one() };
                        rows.push(Row::ge(vec![(a, side.clone()), (b, -side * r)], zero()));
                    }
                    rows.push(Row::eq(vec![(y, one()), (a, -filled)], zero()));
                }
            },
            _ => unreachable!("checked above"),
        }
    }
    let base = p[numeraire];
    let mut targets = Vec::with_capacity(n + hn);
    for (j, pj) in p.iter().enumerate().take(n) {
        targets.push((pv(j), exact(pj / base)?));
    }
    for i in 0..hn {
        targets.push((yv(i), exact(approx.y[i] / base)?));
    }
    let x = closest_feasible_point(&rows, n + hn, &targets).ok_or_else(|| ConvexError::ActiveSetError("no exact point matches the active set".into()))?;
    let prices: Vec<BigRational> = x[..n].to_vec();
    let volumes: Vec<BigRational> = x[n..].to_vec();

    let min = prices.iter().min().cloned().expect("at least one asset");
    let prices: Vec<BigRational> = prices.iter().map(|q| q / &min).collect();
    let volumes: Vec<BigRational> = volumes.iter().map(|q| q / &min).collect();
    let mut trades = vec![vec![BigRational::zero(); n]; inst.participants.len()];
    for (i, h) in prog.halves.iter().enumerate() {
        let t = &mut trades[h.owner];
        t[h.sell] -= &volumes[i] / &prices[h.sell];
        t[h.buy] += &volumes[i] / &prices[h.buy];
    }
    let sol = RationalSolution { prices, volumes, trades };
    if !sol.clears_exactly() {
        return Err(ConvexError::ActiveSetError("exact trades do not clear".into()));
    }
    Ok(sol)
}

/// Exact equilibrium near `approx_prices`, taking volumes from individual responses.
pub fn extract_rational(inst: &BatchInstance, approx_prices: &[f64]) -> Result<RationalSolution, ConvexError> {
    let prog = Program::from_instance(inst)?;
    let y = prog.project_volumes(approx_prices, &prog.response_volumes(approx_prices));
    extract_rational_from_state(inst, &ProgramState { p: approx_prices.to_vec(), y })
}

/// `{"num": "...", "den": "..."}` encoding of an exact rational.
pub fn rational_json(q: &BigRational) -> serde_json::Value {
    serde_json::json!({ "num": q.numer().to_string(), "den": q.denom().to_string() })
}

pub fn rational_from_json(v: &serde_json::Value) -> Option<BigRational> {
    let num: BigInt = v.get("num")?.as_str()?.parse().ok()?;
    let den: BigInt = v.get("den")?.as_str()?.parse().ok()?;
    if den.is_zero() {
        return None;
    }
    Some(BigRational::new(num, den))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn floats_read_as_simple_fractions() {
        assert_eq!(exact(5.0 / 24.0).unwrap(), q(5, 24));
        assert_eq!(exact(1.3333333333333333).unwrap(), q(4, 3));
        assert_eq!(exact(0.1).unwrap(), q(1, 10));
        assert_eq!(exact(-2.5).unwrap(), q(-5, 2));
        assert_eq!(exact(7.0).unwrap(), q(7, 1));
        let pi = std::f64::consts::PI;
        assert!((to_f64(&exact(pi).unwrap()) - pi).abs() <= 4.0 * f64::EPSILON * pi);
    }
}
