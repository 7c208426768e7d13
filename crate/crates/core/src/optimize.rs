//! Quasi-Newton maximization with finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihood::{numeric_gradient, numeric_hessian};

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub max_iter: usize,
    /// Relative change in the objective below which it counts as stationary.
    pub rel_tol: f64,
    /// Largest gradient component allowed at convergence.
    pub grad_tol: f64,
    /// Largest coordinate change in a single step.
    pub max_step: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { max_iter: 500, rel_tol: 1e-10, grad_tol: 1e-6, max_step: 5.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rel_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(1.0)
}

struct Point {
    x: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
}

fn evaluate<F: Fn(&[f64]) -> Result<f64>>(f: &F, x: Vec<f64>) -> Option<Point> {
    let value = f(&x).ok().filter(|v| v.is_finite())?;
    let gradient = numeric_gradient(f, &x).ok()?;
    Some(Point { x, value, gradient })
}

/// Maximize `f` from `x0` by BFGS with a backtracking line search, then
/// polish with Newton steps on the numeric Hessian if the gradient is still
/// above tolerance.
///
/// `inv_hessian` optionally seeds the inverse Hessian of `-f`.
pub fn maximize<F: Fn(&[f64]) -> Result<f64>>(
    f: F,
    x0: &[f64],
    inv_hessian: Option<DMatrix<f64>>,
    settings: Settings,
) -> Result<Optimum> {
    let n = x0.len();
    let start = f(x0)?;
    if !start.is_finite() {
        return Err(Error::NonFinite(format!("starting point {x0:?}")));
    }
    if n == 0 {
        return Ok(Optimum { x: vec![], value: start, gradient: vec![], iterations: 0, converged: true });
    }
    let gradient = numeric_gradient(&f, x0)?;
    let mut p = Point { x: x0.to_vec(), value: start, gradient };

    let seeded = inv_hessian.is_some();
    let mut h = inv_hessian.unwrap_or_else(|| DMatrix::identity(n, n));
    let mut fresh = !seeded;
    let mut last_rel = if max_abs(&p.gradient) < settings.grad_tol { 0.0 } else { f64::INFINITY };
    let mut iterations = 0;
    let mut stationary = 0;

    while iterations < settings.max_iter {
        if max_abs(&p.gradient) < settings.grad_tol && last_rel < settings.rel_tol {
            break;
        }
        if stationary >= 3 {
            break;
        }
        iterations += 1;
        let g = DVector::from_column_slice(&p.gradient);
        let mut d = &h * &g;
        let mut slope = g.dot(&d);
        if !(slope > 0.0) || !slope.is_finite() {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = g.clone();
            slope = g.dot(&d);
        }
        let longest = d.amax();
        if longest > settings.max_step {
            d *= settings.max_step / longest;
            slope = g.dot(&d);
        }

        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let x: Vec<f64> = p.x.iter().zip(d.iter()).map(|(x, d)| x + alpha * d).collect();
            if let Some(q) = evaluate(&f, x) {
                if q.value >= p.value + 1e-4 * alpha * slope {
                    next = Some(q);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(q) = next else {
            if !fresh {
                h = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            break;
        };

        let s = DVector::from_iterator(n, q.x.iter().zip(&p.x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, p.gradient.iter().zip(&q.gradient).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        last_rel = rel_change(p.value, q.value);
        stationary = if last_rel < settings.rel_tol { stationary + 1 } else { 0 };
        p = q;
    }

    if !(max_abs(&p.gradient) < settings.grad_tol && last_rel < settings.rel_tol) {
        let budget = (settings.max_iter - iterations).min(10);
        let (q, polished_rel, steps) = newton_polish(&f, p, settings, budget);
        p = q;
        iterations += steps;
        if polished_rel.is_finite() {
            last_rel = polished_rel;
        }
    }
    let converged = max_abs(&p.gradient) < settings.grad_tol && last_rel < settings.rel_tol;
    Ok(Optimum { x: p.x, value: p.value, gradient: p.gradient, iterations, converged })
}

fn newton_polish<F: Fn(&[f64]) -> Result<f64>>(
    f: &F,
    mut p: Point,
    settings: Settings,
    budget: usize,
) -> (Point, f64, usize) {
    let n = p.x.len();
    let mut last_rel = f64::INFINITY;
    let mut steps = 0;
    while steps < budget {
        if max_abs(&p.gradient) < settings.grad_tol && last_rel < settings.rel_tol {
            break;
        }
        let Ok(hess) = numeric_hessian(f, &p.x) else { break };
        let neg = DMatrix::from_fn(n, n, |i, j| -hess[i][j]);
        let Some(chol) = neg.cholesky() else { break };
        let step = chol.solve(&DVector::from_column_slice(&p.gradient));
        if step.amax() > settings.max_step {
            break;
        }
        let x: Vec<f64> = p.x.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
        let Some(q) = evaluate(f, x) else { break };
        if q.value < p.value - 1e-12 * p.value.abs().max(1.0) {
            break;
        }
        last_rel = rel_change(p.value, q.value);
        steps += 1;
        p = q;
    }
    (p, last_rel, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_a_concave_quadratic() {
        let f = |x: &[f64]| -> Result<f64> {
            Ok(-(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 2.0).powi(2) - (x[0] - 1.0) * (x[1] + 2.0))
        };
        let opt = maximize(f, &[0.0, 0.0], None, Settings::default()).unwrap();
        assert!(opt.converged);
        assert!((opt.x[0] - 1.0).abs() < 1e-6 && (opt.x[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn maximizes_rosenbrock() {
        let f = |x: &[f64]| -> Result<f64> { Ok(-(1.0 - x[0]).powi(2) - 100.0 * (x[1] - x[0] * x[0]).powi(2)) };
        let opt = maximize(f, &[-1.2, 1.0], None, Settings::default()).unwrap();
        assert!(opt.converged, "{opt:?}");
        assert!((opt.x[0] - 1.0).abs() < 1e-5 && (opt.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn flags_exhausted_iterations() {
        let f = |x: &[f64]| -> Result<f64> { Ok(-(1.0 - x[0]).powi(2) - 100.0 * (x[1] - x[0] * x[0]).powi(2)) };
        let opt = maximize(f, &[-1.2, 1.0], None, Settings { max_iter: 2, ..Settings::default() }).unwrap();
        assert_eq!(opt.iterations, 2);
        assert!(!opt.converged);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| -> Result<f64> { Ok(f64::NEG_INFINITY) };
        assert!(maximize(f, &[0.0], None, Settings::default()).is_err());
    }

    #[test]
    fn empty_parameter_vector() {
        let opt = maximize(|_| Ok(-3.0), &[], None, Settings::default()).unwrap();
        assert!(opt.converged);
        assert_eq!(opt.value, -3.0);
    }
}
