//! Quasi-Newton local minimization with finite-difference gradients.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    /// Stop once the gradient of the normalized objective is below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Central-difference step, in the caller's (pre-scaled) units.
    pub fd_step: f64,
    /// Longest step accepted in one iteration.
    pub max_step: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iters: 100, fd_step: 1e-5, max_step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS from `x0` with Armijo backtracking. The objective is divided by
/// `|f(x0)|` internally so `tol` is scale-free. The returned point is never
/// worse than `x0`; non-finite trial values are treated as `+∞`.
pub fn refine_local<F>(mut f: F, x0: &[f64], opts: &RefineOptions) -> Result<RefineOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let scale = if f0.abs() > 0.0 { f0.abs() } else { 1.0 };
    let mut eval = |x: &[f64]| {
        let v = f(x) / scale;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut x = x0.to_vec();
    let mut fx = f0 / scale;
    if n == 0 {
        return Ok(RefineOutcome { x, value: f0, iterations: 0, converged: true });
    }
    let mut g = gradient(&mut eval, &x, fx, opts.fd_step);
    let mut h = identity(n);
    let mut first = true;
    let mut converged = false;
    let mut iters = 0;

    while iters < opts.max_iters {
        let gn = norm(&g);
        if !gn.is_finite() {
            break;
        }
        if gn <= opts.tol {
            converged = true;
            break;
        }
        iters += 1;
        let mut d = mat_vec(&h, &g).into_iter().map(|v| -v).collect::<Vec<_>>();
        if dot(&d, &g) >= 0.0 {
            h = identity(n);
            d = g.iter().map(|v| -v).collect();
        }
        let dn = norm(&d);
        if dn > opts.max_step {
            d.iter_mut().for_each(|v| *v *= opts.max_step / dn);
        }
        let slope = dot(&d, &g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let ft = eval(&xt);
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((xt, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            converged = gn <= opts.tol.sqrt();
            break;
        };
        let gnew = gradient(&mut eval, &xn, fnew, opts.fd_step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-18 * norm(&s) * norm(&yv) && sy > 0.0 {
            if first {
                let gamma = sy / dot(&yv, &yv);
                h = identity(n);
                h.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v *= gamma));
                first = false;
            }
            bfgs_update(&mut h, &s, &yv, sy);
        }
        let small_move = fx - fnew <= 1e-15 * fx.abs().max(1e-300);
        x = xn;
        fx = fnew;
        g = gnew;
        if small_move && norm(&g) <= opts.tol.sqrt() {
            converged = true;
            break;
        }
    }

    Ok(RefineOutcome { x, value: fx * scale, iterations: iters, converged })
}

fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], fx: f64, h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                _ => 0.0,
            }
        })
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let rho = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
