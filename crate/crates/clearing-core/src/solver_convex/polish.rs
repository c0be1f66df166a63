use nalgebra::{DMatrix, DVector};

use super::program::Program;

const KAPPA: f64 = 1.0;
/// Squared residual at which a smoothed system counts as solved.
const SMOOTH_CONVERGED: f64 = 1e-20;

/// Indices of one jump inside the program: half and position in its jump list.
#[derive(Debug, Clone, Copy)]
struct JumpRef {
    half: usize,
    k: usize,
}

/// Semismooth Newton solve of the clearing conditions in `(ln p, jump fill fractions)`.
pub(super) struct Polish<'a> {
    prog: &'a Program,
    jumps: Vec<JumpRef>,
    numeraire: usize,
}

pub(super) struct Polished {
    pub p: Vec<f64>,
    pub amounts: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl<'a> Polish<'a> {
    pub fn new(prog: &'a Program) -> Self {
        let mut jumps = Vec::new();
        for (i, h) in prog.halves.iter().enumerate() {
            for k in 0..h.density.jump_list().len() {
                jumps.push(JumpRef { half: i, k });
            }
        }
        Self { prog, jumps, numeraire: 0 }
    }

    fn dim(&self) -> usize {
        self.prog.n + self.jumps.len()
    }

    /// Fill fractions that sell `amount` from the lowest-rate jump up.
    fn fractions_from(&self, amounts: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.jumps.len());
        let mut left: Vec<f64> = amounts.to_vec();
        for j in &self.jumps {
            let size = self.prog.halves[j.half].density.jump_list()[j.k].size;
            let take = left[j.half].clamp(0.0, size);
            left[j.half] -= take;
            out.push(take / size);
        }
        out
    }

    fn amounts(&self, z: &[f64]) -> Vec<f64> {
        let n = self.prog.n;
        let p: Vec<f64> = z[..n].iter().map(|u| u.exp()).collect();
        let mut x: Vec<f64> = self
            .prog
            .halves
            .iter()
            .enumerate()
            .map(|(i, h)| if h.density.jump_list().is_empty() { h.density.cumulative(self.prog.rate(i, &p)) } else { 0.0 })
            .collect();
        for (k, j) in self.jumps.iter().enumerate() {
            let size = self.prog.halves[j.half].density.jump_list()[j.k].size;
            x[j.half] += z[n + k].clamp(0.0, 1.0) * size;
        }
        x
    }

    fn residual(&self, z: &[f64]) -> Vec<f64> {
        let n = self.prog.n;
        let x = self.amounts(z);
        let mut flow = vec![0.0; n];
        for (i, h) in self.prog.halves.iter().enumerate() {
            let rho = (z[h.sell] - z[h.buy]).exp();
            flow[h.sell] -= x[i];
            flow[h.buy] += x[i] * rho;
        }
        let mut r = Vec::with_capacity(self.dim());
        for j in 0..n {
            if j == self.numeraire {
                r.push(z[j]);
            } else {
                r.push(flow[j] / self.prog.scale[j]);
            }
        }
        for (k, j) in self.jumps.iter().enumerate() {
            let h = &self.prog.halves[j.half];
            let w = z[n + k];
            let gap = (z[h.sell] - z[h.buy]) - h.density.jump_list()[j.k].rate.ln();
            r.push(w - (w + KAPPA * gap).clamp(0.0, 1.0));
        }
        r
    }

    fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.prog.n;
        let dim = self.dim();
        let x = self.amounts(z);
        let mut jac = DMatrix::zeros(dim, dim);
        let p: Vec<f64> = z[..n].iter().map(|u| u.exp()).collect();
        let add = |row: usize, col: usize, v: f64, jac: &mut DMatrix<f64>| {
            if row != self.numeraire && row < n {
                jac[(row, col)] += v / self.prog.scale[row];
            }
        };
        for (i, h) in self.prog.halves.iter().enumerate() {
            let rho = self.prog.rate(i, &p);
            let (a, b) = (h.sell, h.buy);
            let dx = if h.density.jump_list().is_empty() { h.density.marginal(rho) * rho } else { 0.0 };
            add(a, a, -dx, &mut jac);
            add(a, b, dx, &mut jac);
            add(b, a, dx * rho + x[i] * rho, &mut jac);
            add(b, b, -dx * rho - x[i] * rho, &mut jac);
        }
        for (k, j) in self.jumps.iter().enumerate() {
            let h = &self.prog.halves[j.half];
            let size = h.density.jump_list()[j.k].size;
            let rho = self.prog.rate(j.half, &p);
            let col = n + k;
            if (0.0..=1.0).contains(&z[col]) {
                add(h.sell, col, -size, &mut jac);
                add(h.buy, col, size * rho, &mut jac);
            }
            let gap = (z[h.sell] - z[h.buy]) - h.density.jump_list()[j.k].rate.ln();
            let v = z[col] + KAPPA * gap;
            let row = n + k;
            if v > 0.0 && v < 1.0 {
                jac[(row, h.sell)] -= KAPPA;
                jac[(row, h.buy)] += KAPPA;
            } else {
                jac[(row, col)] += 1.0;
            }
        }
        jac[(self.numeraire, self.numeraire)] = 1.0;
        jac
    }

    /// Per-half sold amounts and their log-rate derivatives with each jump replaced by a logistic step of width `mu`.
    fn smoothed_amounts(&self, p: &[f64], mu: f64) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(self.prog.halves.len());
        let mut dx = Vec::with_capacity(self.prog.halves.len());
        for (i, h) in self.prog.halves.iter().enumerate() {
            let rho = self.prog.rate(i, p);
            let jumps = h.density.jump_list();
            if jumps.is_empty() {
                x.push(h.density.cumulative(rho));
                dx.push(h.density.marginal(rho) * rho);
                continue;
            }
            let (mut a, mut d) = (0.0, 0.0);
            for j in jumps {
                let w = 1.0 / (1.0 + (-(rho.ln() - j.rate.ln()) / mu).exp());
                a += w * j.size;
                d += w * (1.0 - w) / mu * j.size;
            }
            x.push(a);
            dx.push(d);
        }
        (x, dx)
    }

    /// Scaled excess flow at log prices `z` under smoothing `mu`, with its jacobian.
    fn smoothed_system(&self, z: &[f64], mu: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.prog.n;
        let p: Vec<f64> = z.iter().map(|u| u.exp()).collect();
        let (x, dx) = self.smoothed_amounts(&p, mu);
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        for (i, h) in self.prog.halves.iter().enumerate() {
            let rho = self.prog.rate(i, &p);
            let (a, b) = (h.sell, h.buy);
            r[a] -= x[i];
            r[b] += x[i] * rho;
            jac[(a, a)] -= dx[i];
            jac[(a, b)] += dx[i];
            jac[(b, a)] += dx[i] * rho + x[i] * rho;
            jac[(b, b)] -= dx[i] * rho + x[i] * rho;
        }
        for j in 0..n {
            let s = self.prog.scale[j];
            r[j] /= s;
            for c in 0..n {
                jac[(j, c)] /= s;
            }
        }
        r[self.numeraire] = z[self.numeraire];
        for c in 0..n {
            jac[(self.numeraire, c)] = 0.0;
        }
        jac[(self.numeraire, self.numeraire)] = 1.0;
        (r, jac)
    }

    /// Damped Newton on the smoothed system from `z`; returns the final point and merit.
    fn smoothed_newton(&self, mut z: Vec<f64>, mu: f64) -> Option<(Vec<f64>, f64)> {
        let (mut r, mut jac) = self.smoothed_system(&z, mu);
        let mut merit = r.norm_squared();
        for _ in 0..60 {
            if merit <= SMOOTH_CONVERGED || jac.iter().any(|v| !v.is_finite()) {
                break;
            }
            let svd = jac.clone().try_svd(true, true, f64::EPSILON, 500)?;
            let smax = svd.singular_values.max();
            let Ok(step) = svd.solve(&r, smax * 1e-13) else { break };
            let mut theta = 1.0 / step.amax().max(1.0);
            let mut moved = false;
            for _ in 0..40 {
                let cand: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a - theta * d).collect();
                let (rc, jc) = self.smoothed_system(&cand, mu);
                let mc = rc.norm_squared();
                if mc.is_finite() && mc < merit {
                    (z, r, jac, merit) = (cand, rc, jc, mc);
                    moved = true;
                    break;
                }
                theta *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Some((z, merit))
    }

    /// Follows the smoothed equilibrium from `p0` as the jump width shrinks; returns prices and amounts.
    pub fn smoothed_start(&mut self, p0: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        self.numeraire = 0;
        let z0: Vec<f64> = p0.iter().map(|p| (p / p0[0]).ln()).collect();
        let (mut z, merit) = self.smoothed_newton(z0, 1.0)?;
        if merit > SMOOTH_CONVERGED {
            return None;
        }
        let mut mu = 1.0;
        let mut factor: f64 = 0.1;
        while mu > 1e-10 && factor < 0.95 {
            let next = mu * factor;
            match self.smoothed_newton(z.clone(), next) {
                Some((zn, m)) if m <= SMOOTH_CONVERGED => {
                    z = zn;
                    mu = next;
                    factor = (factor * factor).max(0.1);
                }
                _ => factor = factor.sqrt(),
            }
        }
        let p: Vec<f64> = z.iter().map(|u| u.exp()).collect();
        let (x, _) = self.smoothed_amounts(&p, mu);
        Some((p, x))
    }

    /// Newton iterations from prices `p0` and per-half sold amounts `x0`.
    pub fn run(&mut self, p0: &[f64], x0: &[f64], max_iters: usize) -> Polished {
        let n = self.prog.n;
        self.numeraire = (0..n).min_by(|&a, &b| p0[a].total_cmp(&p0[b])).unwrap_or(0);
        let base = p0[self.numeraire];
        let mut z: Vec<f64> = p0.iter().map(|p| (p / base).ln()).collect();
        z.extend(self.fractions_from(x0));
        let mut r = self.residual(&z);
        let mut merit: f64 = r.iter().map(|v| v * v).sum();
        let mut iterations = 0;
        for it in 0..max_iters {
            iterations = it + 1;
            if r.iter().all(|v| v.abs() <= 1e-15) {
                break;
            }
            let jac = self.jacobian(&z);
            if jac.iter().any(|v| !v.is_finite()) {
                break;
            }
            let Some(svd) = jac.try_svd(true, true, f64::EPSILON, 500) else { break };
            let smax = svd.singular_values.max();
            let rhs = DVector::from_column_slice(&r);
            let Ok(step) = svd.solve(&rhs, smax * 1e-13) else { break };
            let mut theta = 1.0;
            let mut moved = false;
            for _ in 0..50 {
                let cand: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a - theta * d).collect();
                let rc = self.residual(&cand);
                let mc: f64 = rc.iter().map(|v| v * v).sum();
                if mc.is_finite() && mc < merit {
                    z = cand;
                    r = rc;
                    merit = mc;
                    moved = true;
                    break;
                }
                theta *= 0.5;
            }
            if !moved {
                break;
            }
        }
        for k in 0..self.jumps.len() {
            z[n + k] = z[n + k].clamp(0.0, 1.0);
        }
        let residual = self.residual(&z).iter().map(|v| v.abs()).fold(0.0, f64::max);
        let amounts = self.amounts(&z);
        Polished { p: z[..n].iter().map(|u| u.exp()).collect(), amounts, residual, iterations }
    }
}
