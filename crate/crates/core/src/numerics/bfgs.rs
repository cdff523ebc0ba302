use alloc::vec;
use alloc::vec::Vec;

use super::{dot, inf_norm, Objective};

/// Settings for [`bfgs_maximize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Stop once the gradient infinity-norm drops to this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-increase constant.
    pub c1: f64,
    /// Step shrink factor used by the backtracking line search.
    pub backtrack: f64,
    /// Smallest step the line search may try before giving up.
    pub min_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 200, c1: 1e-4, backtrack: 0.5, min_step: 1e-16 }
    }
}

impl BfgsOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Consecutive accepted steps without a measurable increase before giving up.
const MAX_FLAT_STEPS: usize = 25;

/// Maximizes `obj` starting from `x0` with a dense BFGS inverse-Hessian
/// approximation and an Armijo backtracking line search.
///
/// Accepted steps never decrease the objective. The inverse-Hessian update is
/// skipped whenever the curvature pair fails `s'y > 1e-10 |s| |y|`. If the
/// line search shrinks the step below `min_step` the best point so far is
/// returned with `converged = false`.
pub fn bfgs_maximize<O: Objective + ?Sized>(obj: &O, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome {
    let n = obj.dim();
    assert_eq!(x0.len(), n, "bfgs_maximize: starting point has the wrong dimension");

    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.value_and_gradient(&x, &mut g);
    if n == 0 {
        return BfgsOutcome { x, value: f, converged: true, iterations: 0, grad_norm: 0.0 };
    }
    if !f.is_finite() {
        return BfgsOutcome { x, value: f, converged: false, iterations: 0, grad_norm: f64::NAN };
    }

    // Inverse Hessian of the negated objective, row-major.
    let mut hinv = identity(n);
    let mut scaled = false;
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut hy = vec![0.0; n];
    let mut flat_steps = 0usize;

    for iter in 0..opts.max_iter {
        let gnorm = inf_norm(&g);
        if gnorm <= opts.tol {
            return BfgsOutcome { x, value: f, converged: true, iterations: iter, grad_norm: gnorm };
        }

        mat_vec(&hinv, &g, &mut dir);
        let mut slope = dot(&g, &dir);
        if !(slope > 0.0) {
            // lost positive definiteness; fall back to steepest ascent
            reset_identity(&mut hinv);
            scaled = false;
            dir.copy_from_slice(&g);
            slope = dot(&g, &g);
        }

        let mut step = 1.0;
        let f_next = loop {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let fv = obj.value(&x_new);
            if fv.is_finite() && fv >= f + opts.c1 * step * slope {
                break fv;
            }
            step *= opts.backtrack;
            if step < opts.min_step {
                return BfgsOutcome { x, value: f, converged: false, iterations: iter, grad_norm: gnorm };
            }
        };
        // Once the Armijo margin falls below the resolution of f, steps stop
        // registering. A few can still shrink the gradient; a long run of
        // them means no measurable progress is left.
        if f_next > f {
            flat_steps = 0;
        } else {
            flat_steps += 1;
            if flat_steps > MAX_FLAT_STEPS {
                return BfgsOutcome { x, value: f, converged: false, iterations: iter + 1, grad_norm: gnorm };
            }
        }
        let f_check = obj.value_and_gradient(&x_new, &mut g_new);
        debug_assert!(f_check == f_next || (f_check - f_next).abs() <= 1e-12 * f_next.abs().max(1.0));

        // Curvature pair for the minimization of -f.
        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g[i] - g_new[i];
        }
        let sy = dot(&s, &y);
        let s_norm = libm::sqrt(dot(&s, &s));
        let y_norm = libm::sqrt(dot(&y, &y));
        if sy > 1e-10 * s_norm * y_norm {
            if !scaled {
                let scale = sy / dot(&y, &y);
                reset_identity(&mut hinv);
                hinv.iter_mut().for_each(|h| *h *= scale);
                scaled = true;
            }
            bfgs_update(&mut hinv, &s, &y, sy, &mut hy);
        }

        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_next;
    }

    let gnorm = inf_norm(&g);
    BfgsOutcome { x, value: f, converged: gnorm <= opts.tol, iterations: opts.max_iter, grad_norm: gnorm }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    reset_identity(&mut m);
    m
}

fn reset_identity(m: &mut [f64]) {
    let n = libm::sqrt(m.len() as f64) as usize;
    m.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        out[i] = dot(&m[i * n..(i + 1) * n], v);
    }
}

/// `H <- (I - rho s y') H (I - rho y s') + rho s s'` with `rho = 1 / s'y`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, hy: &mut [f64]) {
    let n = s.len();
    mat_vec(h, y, hy);
    let yhy = dot(y, hy);
    let a = (sy + yhy) / (sy * sy);
    let b = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += a * s[i] * s[j] - b * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
