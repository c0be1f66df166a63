use nalgebra::{DMatrix, DVector};

use super::program::{Program, ProgramState};
use super::{DiagRow, SolveOptions};

/// Projects `d` onto directions that keep `m d = 0` and move only the `free` columns.
fn project_direction(m: &DMatrix<f64>, d: &[f64], free: &[bool]) -> Vec<f64> {
    let cols: Vec<usize> = (0..d.len()).filter(|&i| free[i]).collect();
    let mut out = vec![0.0; d.len()];
    if cols.is_empty() {
        return out;
    }
    let mf = m.select_columns(cols.iter());
    let df = DVector::from_iterator(cols.len(), cols.iter().map(|&i| d[i]));
    let g = &mf * mf.transpose();
    let corrected = match g.pseudo_inverse(1e-12) {
        Ok(ginv) => &df - mf.transpose() * (ginv * (&mf * &df)),
        Err(_) => df,
    };
    for (k, &i) in cols.iter().enumerate() {
        out[i] = corrected[k];
    }
    out
}

/// Feasible-direction projected subgradient descent from `start`.
pub(super) fn descend(prog: &Program, start: ProgramState, opts: &SolveOptions, diag: &mut Vec<DiagRow>) -> (ProgramState, usize) {
    let m = prog.incidence();
    let mut s = start;
    let mut obj = prog.objective_value(&s);
    let mut stalls = 0;
    let mut iters = 0;
    for t in 1..=opts.max_iters {
        iters = t;
        let (gp, gy) = prog.gradient_unchecked(&s);
        let grad_norm = gp.iter().chain(&gy).map(|v| v.abs()).fold(0.0, f64::max);
        diag.push(DiagRow { iter: t, objective: obj, grad_norm });
        if obj <= opts.tol * 1e-2 {
            break;
        }
        let mut dp: Vec<f64> = gp.iter().zip(&s.p).map(|(g, p)| if *p <= 1.0 && *g > 0.0 { 0.0 } else { -g }).collect();
        let raw_y: Vec<f64> = gy.iter().map(|g| -g).collect();
        let mut free: Vec<bool> = (0..raw_y.len())
            .map(|i| !((s.y[i] <= 0.0 && raw_y[i] < 0.0) || (s.y[i] >= prog.cap(i, &s.p) && raw_y[i] > 0.0)))
            .collect();
        let mut dy = project_direction(&m, &raw_y, &free);
        for _ in 0..raw_y.len() {
            let blocked: Vec<usize> = (0..dy.len())
                .filter(|&i| free[i] && ((s.y[i] <= 0.0 && dy[i] < 0.0) || (s.y[i] >= prog.cap(i, &s.p) && dy[i] > 0.0)))
                .collect();
            if blocked.is_empty() {
                break;
            }
            for i in blocked {
                free[i] = false;
            }
            dy = project_direction(&m, &raw_y, &free);
        }
        let norm = dp.iter().chain(&dy).map(|v| v.abs()).fold(0.0, f64::max);
        if norm.is_nan() || norm <= 0.0 {
            break;
        }
        let pmax = s.p.iter().cloned().fold(1.0, f64::max);
        let ymax = prog.volume_unit(&s.p);
        let len = opts.step_c / (t as f64).sqrt() * norm.max(1.0) / norm;
        for v in dp.iter_mut() {
            *v *= len * pmax;
        }
        for v in dy.iter_mut() {
            *v *= len * ymax;
        }
        let mut theta: f64 = 1.0;
        for (i, v) in dy.iter().enumerate() {
            if *v < 0.0 {
                theta = theta.min(s.y[i] / -v);
            } else if *v > 0.0 {
                theta = theta.min((prog.cap(i, &s.p) - s.y[i]).max(0.0) / v);
            }
        }
        for (j, v) in dp.iter().enumerate() {
            if *v < 0.0 {
                theta = theta.min((s.p[j] - 1.0) / -v);
            }
        }
        let mut accepted = false;
        for _ in 0..30 {
            if theta <= 0.0 {
                break;
            }
            let p: Vec<f64> = s.p.iter().zip(&dp).map(|(a, b)| (a + theta * b).max(1.0)).collect();
            let y: Vec<f64> = s.y.iter().zip(&dy).map(|(a, b)| (a + theta * b).max(0.0)).collect();
            let cand = ProgramState { p, y };
            let ok = cand.y.iter().enumerate().all(|(i, v)| *v <= prog.cap(i, &cand.p) * (1.0 + 1e-15));
            if ok {
                let o = prog.objective_value(&cand);
                if o < obj {
                    s = cand;
                    obj = o;
                    accepted = true;
                    break;
                }
            }
            theta *= 0.5;
        }
        if accepted {
            stalls = 0;
        } else {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        }
    }
    (s, iters)
}
