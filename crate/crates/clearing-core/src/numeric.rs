//! Small scalar routines shared by the modules: root bracketing, quadrature, finite differences.

/// Central-difference gradient with step `max(1e-6, 1e-6 * |x_i|)`.
pub fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = (1e-6 * x[i].abs()).max(1e-6);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `t` in `[lo, hi]` with `pred(t)` true, assuming `pred` holds on a prefix.
/// `pred(lo)` must be true.
pub fn bisect_last_true(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool, iters: usize) -> f64 {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Same as [`bisect_last_true`] on a logarithmic scale; both ends must be positive.
pub fn bisect_last_true_log(lo: f64, hi: f64, pred: impl Fn(f64) -> bool, iters: usize) -> f64 {
    bisect_last_true(lo.ln(), hi.ln(), |t| pred(t.exp()), iters).exp()
}

/// Root of a continuous `f` with `f(lo)` and `f(hi)` of opposite sign (or zero).
pub fn bisect_root(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, iters: usize) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a.is_nan() || b.is_nan() || b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Maximizer of a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Angle in radians between two vectors.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { std::f64::consts::FRAC_PI_2 };
    }
    let c = (dot / (na * nb)).clamp(-1.0, 1.0);
    let s = {
        let mut acc = 0.0;
        for i in 0..a.len() {
            for j in (i + 1)..a.len() {
                let t = a[i] * b[j] - a[j] * b[i];
                acc += t * t;
            }
        }
        acc.sqrt() / (na * nb)
    };
    s.atan2(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_log() {
        let v = adaptive_simpson(&|x: f64| x.ln(), 1.0, std::f64::consts::E, 1e-13);
        assert!((v - 1.0).abs() < 1e-11);
    }

    #[test]
    fn bisection_finds_threshold() {
        let t = bisect_last_true(0.0, 10.0, |x| x * x <= 2.0, 200);
        assert!((t - 2f64.sqrt()).abs() < 1e-14);
        let r = bisect_root(0.0, 3.0, |x| x * x - 2.0, 200);
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn golden_section_peak() {
        let x = golden_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 200);
        assert!((x - 0.3).abs() < 1e-7);
    }

    #[test]
    fn angle_is_small_for_parallel() {
        assert!(angle_between(&[1.0, 2.0], &[2.0, 4.0]) < 1e-15);
        assert!((angle_between(&[1.0, 0.0], &[0.0, 1.0]) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
