//! Quasi-Newton (BFGS) minimisation with a backtracking Armijo line search.
//!
//! The objective may return `+∞` outside its feasible region; the line
//! search then shrinks the step until it lands back inside.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once `‖g‖∞ ≤ gtol · (1 + |f|)`.
    pub gtol: f64,
    /// Stop once the relative decrease of `f` in one iteration is below this.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-8,
            ftol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub iterations: usize,
}

/// Minimises `f` starting from `x0`. `fg` returns the value and gradient.
pub fn minimize<F>(fg: F, x0: DVector<f64>, opts: &BfgsOptions) -> BfgsResult
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x);
    if n == 0 || !f.is_finite() {
        return BfgsResult { x, f, iterations: 0 };
    }
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if g.amax() <= opts.gtol * (1.0 + f.abs()) {
            break;
        }
        iterations += 1;
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let x_new = &x + &dir * step;
            let (f_new, g_new) = fg(&x_new);
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                accepted = Some((x_new, f_new, g_new));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let decrease = f - f_new;
        x = x_new;
        g = g_new;
        let f_old = f;
        f = f_new;
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        if decrease <= opts.ftol * f_old.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    BfgsResult { x, f, iterations }
}
