//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! Search directions come from the L-BFGS two-loop recursion restricted to the
//! variables that are not pinned at an active bound; iterates are projected
//! back into the box and accepted under an Armijo condition, so the recorded
//! objective trace never increases.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the projected gradient's max-norm drops below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease stays below this for a few iterations.
    pub rel_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iter: 200,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Variables sitting on a bound with the gradient pushing outward.
fn active_set(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            let span = (hi[i] - lo[i]).abs().max(1.0);
            (x[i] <= lo[i] + 1e-12 * span && g[i] > 0.0)
                || (x[i] >= hi[i] - 1e-12 * span && g[i] < 0.0)
        })
        .collect()
}

fn projected_grad_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

/// Minimize `f` over the box `[lo, hi]`. The closure returns the value and
/// gradient, or `None` when the objective is not finite at that point.
pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &LbfgsOptions,
) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    Error::check_dim(n, lo.len())?;
    Error::check_dim(n, hi.len())?;
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)
        .filter(|(v, g)| v.is_finite() && g.iter().all(|c| c.is_finite()))
        .ok_or_else(|| Error::Numerical("objective not finite at the starting point".into()))?;
    let mut trace = vec![fx];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stall = 0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        if projected_grad_norm(&x, &g, lo, hi) < opts.grad_tol {
            converged = true;
            break;
        }
        let active = active_set(&x, &g, lo, hi);
        let masked = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(&active)
                .map(|(c, a)| if *a { 0.0 } else { *c })
                .collect()
        };

        // two-loop recursion on the free subspace
        let mut q = masked(&g);
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(&masked(s), &q);
            for i in 0..n {
                if !active[i] {
                    q[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            if gamma.is_finite() && gamma > 0.0 {
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        } else {
            let gmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax > 1.0 {
                q.iter_mut().for_each(|v| *v /= gmax);
            }
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(&masked(y), &q);
            for i in 0..n {
                if !active[i] {
                    q[i] += (a - b) * s[i];
                }
            }
        }
        let mut dir: Vec<f64> = masked(&q).iter().map(|v| -v).collect();
        if dot(&dir, &g) >= 0.0 {
            mem.clear();
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            dir = masked(&g).iter().map(|v| -v / gmax).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            project(&mut xn, lo, hi);
            let moved: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &moved);
            if let Some((fv, gv)) = f(&xn) {
                if fv.is_finite()
                    && gv.iter().all(|c| c.is_finite())
                    && fv <= fx + opts.armijo * decrease.min(0.0)
                    && fv <= fx
                {
                    accepted = Some((xn, fv, gv, moved));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fv, gv, s)) = accepted else {
            // no admissible step: treat as converged at the current point
            converged = true;
            break;
        };
        let y: Vec<f64> = gv.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - fv) / fx.abs().max(1.0);
        x = xn;
        fx = fv;
        g = gv;
        trace.push(fx);
        if rel < opts.rel_tol {
            stall += 1;
            if stall >= 3 {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }
    Ok(LbfgsResult {
        x,
        value: fx,
        trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosen(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock_unconstrained() {
        let opts = LbfgsOptions {
            max_iter: 500,
            grad_tol: 1e-8,
            ..Default::default()
        };
        let r = minimize(rosen, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts).unwrap();
        assert!(
            (r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            r.x
        );
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_active_bound() {
        // minimum of (x-3)^2 + (y+1)^2 on [0,2]x[0,2] is (2,0)
        let f = |x: &[f64]| {
            Some((
                (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2),
                vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)],
            ))
        };
        let r = minimize(
            f,
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[2.0, 2.0],
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert_eq!(r.x, vec![2.0, 0.0]);
        assert!(r.converged);
    }

    #[test]
    fn rejects_nonfinite_start() {
        let f = |_: &[f64]| None;
        assert!(minimize(f, &[0.0], &[-1.0], &[1.0], &LbfgsOptions::default()).is_err());
    }
}
