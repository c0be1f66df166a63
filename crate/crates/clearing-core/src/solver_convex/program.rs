use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::ConvexError;
use crate::cfmm::TradingFunction;
use crate::density::{density_from_function, HalfDensity};
use crate::market_core::{AssetId, BatchInstance, Participant};

/// Bound on `ln D⁻¹` where the inverse is infinite.
const LOG_RATE_CAP: f64 = 700.0;

/// One direction of one participant, sold `sell` for `buy` along `density`.
#[derive(Debug, Clone)]
pub struct ProgramHalf {
    pub owner: usize,
    pub sell: usize,
    pub buy: usize,
    pub density: HalfDensity,
}

/// Prices and valuation-weighted volumes per half.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramState {
    pub p: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Program {
    pub n: usize,
    pub halves: Vec<ProgramHalf>,
    pub notices: Vec<String>,
    pub scale: Vec<f64>,
}

impl Program {
    pub fn from_instance(inst: &BatchInstance) -> Result<Self, ConvexError> {
        let mut halves = Vec::new();
        let mut notices = Vec::new();
        for (i, part) in inst.participants.iter().enumerate() {
            match part {
                Participant::LimitSell(o) => {
                    let d = HalfDensity::jumps(&[(o.min_price, o.amount)])?;
                    halves.push(ProgramHalf { owner: i, sell: o.sell.0, buy: o.buy.0, density: d.with_assets(o.sell, o.buy) });
                }
                Participant::LimitBuy(_) => {
                    return Err(ConvexError::UnsupportedParticipant { participant: i, reason: "limit buy offers are not substitutes".into() });
                }
                Participant::Cfmm(c) => {
                    if c.assets.len() != 2 {
                        return Err(ConvexError::UnsupportedParticipant { participant: i, reason: format!("cfmm {} trades {} assets", c.id, c.assets.len()) });
                    }
                    let f = c.effective_function()?;
                    let pair = density_from_function(&f, &c.reserves)?;
                    let custom = matches!(&f, TradingFunction::Custom(_))
                        || matches!(&f, TradingFunction::Fee(w) if matches!(w.inner, TradingFunction::Custom(_)));
                    for (h, sell, buy) in [(pair.forward, c.assets[0], c.assets[1]), (pair.reverse, c.assets[1], c.assets[0])] {
                        if custom && !h.is_monotone() {
                            return Err(ConvexError::UnsupportedParticipant {
                                participant: i,
                                reason: format!("cfmm {} sells less as the rate rises", c.id),
                            });
                        }
                        halves.push(ProgramHalf { owner: i, sell: sell.0, buy: buy.0, density: h.with_assets(sell, buy) });
                    }
                }
            }
        }
        halves.retain(|h| {
            if h.density.is_empty() {
                notices.push(format!("participant {} sells nothing of asset {}; dropped", h.owner, h.sell));
                false
            } else {
                true
            }
        });
        Ok(Self { n: inst.n_assets(), halves, notices, scale: inst.scale() })
    }

    pub fn asset(&self, j: usize) -> AssetId {
        AssetId(j)
    }

    pub fn rate(&self, i: usize, p: &[f64]) -> f64 {
        let h = &self.halves[i];
        p[h.sell] / p[h.buy]
    }

    /// Largest admissible volume of half `i` at prices `p`.
    pub fn cap(&self, i: usize, p: &[f64]) -> f64 {
        self.halves[i].density.total() * p[self.halves[i].sell]
    }

    /// Asset-by-half matrix with `+1` where the half sells and `-1` where it buys.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.halves.len());
        for (i, h) in self.halves.iter().enumerate() {
            m[(h.sell, i)] += 1.0;
            m[(h.buy, i)] -= 1.0;
        }
        m
    }

    /// Worst violation of the constraints, relative to the volume scale.
    pub fn infeasibility(&self, s: &ProgramState) -> f64 {
        let unit = self.volume_unit(&s.p);
        let mut worst: f64 = 0.0;
        for pj in &s.p {
            worst = worst.max((1.0 - pj).max(0.0));
        }
        let mut flow = vec![0.0; self.n];
        for (i, h) in self.halves.iter().enumerate() {
            let y = s.y[i];
            worst = worst.max((-y).max(0.0) / unit).max((y - self.cap(i, &s.p)).max(0.0) / unit);
            flow[h.sell] += y;
            flow[h.buy] -= y;
        }
        flow.iter().fold(worst, |w, f| w.max(f.abs() / unit))
    }

    pub fn volume_unit(&self, p: &[f64]) -> f64 {
        self.halves.iter().enumerate().map(|(i, _)| self.cap(i, p)).fold(1e-12, f64::max)
    }

    fn amount(&self, i: usize, s: &ProgramState) -> f64 {
        let h = &self.halves[i];
        (s.y[i] / s.p[h.sell]).clamp(0.0, h.density.total())
    }

    /// The objective without the feasibility check.
    pub fn objective_value(&self, s: &ProgramState) -> f64 {
        let mut acc = 0.0;
        for (i, h) in self.halves.iter().enumerate() {
            let pa = s.p[h.sell];
            let rho = self.rate(i, &s.p);
            let g = h.density.g_value(self.amount(i, s)).unwrap_or(f64::NAN);
            acc += pa * (h.density.f_integral(rho) - g);
        }
        acc
    }

    pub fn objective(&self, s: &ProgramState) -> Result<f64, ConvexError> {
        self.check(s)?;
        Ok(self.objective_value(s))
    }

    fn check(&self, s: &ProgramState) -> Result<(), ConvexError> {
        if s.p.len() != self.n || s.y.len() != self.halves.len() {
            return Err(ConvexError::InfeasibleState(format!("state has {} prices and {} volumes", s.p.len(), s.y.len())));
        }
        let v = self.infeasibility(s);
        if v > 1e-9 {
            return Err(ConvexError::InfeasibleState(format!("constraint violation {v:e}")));
        }
        Ok(())
    }

    /// Partial derivatives in prices and volumes (left subgradient at kinks).
    pub fn gradient_unchecked(&self, s: &ProgramState) -> (Vec<f64>, Vec<f64>) {
        let mut gp = vec![0.0; self.n];
        let mut gy = vec![0.0; self.halves.len()];
        for (i, h) in self.halves.iter().enumerate() {
            let d = &h.density;
            let x = self.amount(i, s);
            let rho = self.rate(i, &s.p);
            let inv = if x >= d.total() { d.inverse_left(x) } else { d.inverse(x) }.unwrap_or(f64::INFINITY);
            let log_inv = inv.ln().clamp(-LOG_RATE_CAP, LOG_RATE_CAP);
            gy[i] = log_inv;
            let sold = d.cumulative(rho);
            let g = d.g_value(x).unwrap_or(0.0);
            gp[h.sell] += d.f_integral(rho) + sold - g - x * log_inv;
            gp[h.buy] -= rho * sold;
        }
        (gp, gy)
    }

    pub fn gradient(&self, s: &ProgramState) -> Result<(Vec<f64>, Vec<f64>), ConvexError> {
        self.check(s)?;
        Ok(self.gradient_unchecked(s))
    }

    /// Volumes each half would trade if it responded to `p` on its own.
    pub fn response_volumes(&self, p: &[f64]) -> Vec<f64> {
        self.halves.iter().enumerate().map(|(i, h)| p[h.sell] * h.density.cumulative(self.rate(i, p))).collect()
    }

    /// Largest gap between recorded volumes and the set of individual responses at `s.p`.
    pub fn response_gap(&self, s: &ProgramState) -> f64 {
        self.halves
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let rho = self.rate(i, &s.p);
                let pa = s.p[h.sell];
                let lo = pa * h.density.cumulative(rho);
                let hi = pa * h.density.cumulative_right(rho);
                (lo - s.y[i]).max(s.y[i] - hi).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Minimal-norm correction of `y` onto the conservation constraints, then clamped to its bounds.
    pub fn project_volumes(&self, p: &[f64], y: &[f64]) -> Vec<f64> {
        if self.halves.is_empty() {
            return Vec::new();
        }
        let m = self.incidence();
        let mut v = DVector::from_column_slice(y);
        for _ in 0..4 {
            let r = &m * &v;
            if r.amax() <= 1e-15 * self.volume_unit(p) {
                break;
            }
            let g = &m * m.transpose();
            let Ok(ginv) = g.pseudo_inverse(1e-12) else { break };
            v -= m.transpose() * (ginv * r);
            for i in 0..v.len() {
                v[i] = v[i].clamp(0.0, self.cap(i, p));
            }
        }
        v.iter().copied().collect()
    }

    /// A random feasible state: prices at least one, volumes a sum of random circulations.
    pub fn random_feasible_state(&self, rng: &mut impl Rng) -> ProgramState {
        let p: Vec<f64> = (0..self.n).map(|_| (rng.gen_range(0.0f64..3.0)).exp()).collect();
        let mut y = vec![0.0; self.halves.len()];
        let h = self.halves.len();
        if h == 0 {
            return ProgramState { p, y };
        }
        for _ in 0..(2 * h) {
            let start = rng.gen_range(0..h);
            let Some(cycle) = self.random_cycle(start, rng) else { continue };
            let room = cycle.iter().map(|&i| self.cap(i, &p) - y[i]).fold(f64::INFINITY, f64::min);
            if room > 0.0 {
                let push = room * rng.gen_range(0.0..1.0);
                for &i in &cycle {
                    y[i] += push;
                }
            }
        }
        for (i, v) in y.iter_mut().enumerate() {
            *v = v.min(self.cap(i, &p));
        }
        ProgramState { p, y }
    }

    /// Halves forming a directed cycle through `start`, found by randomized search.
    fn random_cycle(&self, start: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
        let target = self.halves[start].sell;
        let mut path = vec![start];
        let mut at = self.halves[start].buy;
        let mut seen = vec![false; self.n];
        seen[at] = true;
        while at != target {
            let options: Vec<usize> = (0..self.halves.len())
                .filter(|&i| self.halves[i].sell == at && (self.halves[i].buy == target || !seen[self.halves[i].buy]))
                .collect();
            if options.is_empty() {
                return None;
            }
            let next = options[rng.gen_range(0..options.len())];
            path.push(next);
            at = self.halves[next].buy;
            seen[at] = true;
        }
        Some(path)
    }
}
