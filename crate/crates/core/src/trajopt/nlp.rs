//! Augmented-Lagrangian solver for smooth problems with inequality
//! constraints g(z) ≤ 0, using BFGS with a strong Wolfe line search for the
//! bound-free subproblems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective value and constraint values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub g: Vec<f64>,
}

/// Interface between the solver and a transcribed problem.
pub trait ConstrainedProblem {
    fn dim(&self) -> usize;

    fn evaluate(&self, z: &[f64]) -> Result<Evaluation>;

    /// Returns the evaluation at `z` and ∇f + Σ yᵢ∇gᵢ with `y = weights(&g)`.
    fn gradient(&self, z: &[f64], weights: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<(Evaluation, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Maximum multiplier updates.
    pub max_outer: usize,
    /// Maximum BFGS iterations per subproblem.
    pub max_inner: usize,
    /// Infinity-norm tolerance on the subproblem gradient.
    pub grad_tol: f64,
    /// Largest admissible constraint value at convergence.
    pub constraint_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_outer: 40,
            max_inner: 400,
            grad_tol: 1e-6,
            constraint_tol: 1e-7,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e9,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::invalid("solver", "iteration limits must be positive"));
        }
        for (what, v) in [
            ("grad_tol", self.grad_tol),
            ("constraint_tol", self.constraint_tol),
            ("penalty_init", self.penalty_init),
            ("penalty_max", self.penalty_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(what, "must be positive"));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::invalid("penalty_growth", "must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub z: Vec<f64>,
    pub f: f64,
    pub max_violation: f64,
    pub multipliers: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Final constraint violation within `constraint_tol`.
    pub feasible: bool,
}

fn max_violation(g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(*v))
}

struct Counter {
    evals: usize,
}

/// Augmented Lagrangian L = f + Σ (max(0, λ + ρg)² − λ²) / (2ρ).
fn al_value(e: &Evaluation, lambda: &[f64], rho: f64) -> f64 {
    let pen: f64 = e
        .g
        .iter()
        .zip(lambda)
        .map(|(g, l)| {
            let t = (l + rho * g).max(0.0);
            (t * t - l * l) / (2.0 * rho)
        })
        .sum();
    e.f + pen
}

fn al_value_grad<P: ConstrainedProblem + ?Sized>(
    p: &P,
    z: &[f64],
    lambda: &[f64],
    rho: f64,
    c: &mut Counter,
) -> Option<(f64, Vec<f64>, Evaluation)> {
    c.evals += 1;
    let weights = |g: &[f64]| -> Vec<f64> { g.iter().zip(lambda).map(|(g, l)| (l + rho * g).max(0.0)).collect() };
    let (e, grad) = p.gradient(z, &weights).ok()?;
    let v = al_value(&e, lambda, rho);
    if !v.is_finite() || grad.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some((v, grad, e))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

type Point = (Vec<f64>, f64, Vec<f64>, Evaluation);

/// Strong Wolfe line search along `d` from `x`.
#[allow(clippy::too_many_arguments)]
fn line_search<P: ConstrainedProblem + ?Sized>(
    p: &P,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    lambda: &[f64],
    rho: f64,
    c: &mut Counter,
) -> Option<Point> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let dphi0 = dot(g0, d);
    if !(dphi0 < 0.0) {
        return None;
    }
    let at = |a: f64, c: &mut Counter| -> Option<Point> {
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        let (v, g, e) = al_value_grad(p, &xa, lambda, rho, c)?;
        Some((xa, v, g, e))
    };
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut dphi_prev = dphi0;
    let mut a = 1.0;
    for i in 0..30 {
        let Some(pt) = at(a, c) else {
            // Undefined point (outside the model domain): shrink.
            a = 0.5 * (a_prev + a);
            if a - a_prev < 1e-16 {
                return None;
            }
            continue;
        };
        let dphi = dot(&pt.2, d);
        if pt.1 > f0 + C1 * a * dphi0 || (i > 0 && pt.1 >= f_prev) {
            return zoom(f0, dphi0, d, c, (a_prev, f_prev, dphi_prev), (a, pt.1, dphi), &at);
        }
        if dphi.abs() <= -C2 * dphi0 {
            return Some(pt);
        }
        if dphi >= 0.0 {
            return zoom(f0, dphi0, d, c, (a, pt.1, dphi), (a_prev, f_prev, dphi_prev), &at);
        }
        a_prev = a;
        f_prev = pt.1;
        dphi_prev = dphi;
        a *= 2.0;
    }
    None
}

fn zoom(
    f0: f64,
    dphi0: f64,
    d: &[f64],
    c: &mut Counter,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    at: &dyn Fn(f64, &mut Counter) -> Option<Point>,
) -> Option<Point> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut best: Option<Point> = None;
    for _ in 0..40 {
        // Cubic interpolation from values and slopes, safeguarded.
        let (a0, f0i, d0) = lo;
        let (a1, f1i, d1) = hi;
        let d1c = d0 + d1 - 3.0 * (f0i - f1i) / (a0 - a1);
        let rad = d1c * d1c - d0 * d1;
        let mut a = if rad >= 0.0 {
            let d2 = rad.sqrt() * (a1 - a0).signum();
            a1 - (a1 - a0) * (d1 + d2 - d1c) / (d1 - d0 + 2.0 * d2)
        } else {
            f64::NAN
        };
        let (lo_a, hi_a) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
        let margin = 0.1 * (hi_a - lo_a);
        if !a.is_finite() || a < lo_a + margin || a > hi_a - margin {
            a = 0.5 * (a0 + a1);
        }
        if (hi_a - lo_a) < 1e-14 * hi_a.max(1.0) {
            break;
        }
        let Some(pt) = at(a, c) else {
            hi = (a, f64::INFINITY, 0.0);
            continue;
        };
        let dphi = dot(&pt.2, d);
        if pt.1 > f0 + C1 * a * dphi0 || pt.1 >= lo.1 {
            hi = (a, pt.1, dphi);
        } else {
            if dphi.abs() <= -C2 * dphi0 {
                return Some(pt);
            }
            if dphi * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, pt.1, dphi);
            best = Some(pt);
        }
    }
    // Accept a sufficient-decrease point even without the curvature condition.
    best
}

/// Minimizes the augmented Lagrangian for fixed (λ, ρ) starting at `x`.
fn bfgs<P: ConstrainedProblem + ?Sized>(
    p: &P,
    x0: Vec<f64>,
    lambda: &[f64],
    rho: f64,
    settings: &SolverSettings,
    h: &mut Vec<Vec<f64>>,
    c: &mut Counter,
) -> Result<(Point, usize)> {
    let n = x0.len();
    let (mut fx, mut gx, mut ex) =
        al_value_grad(p, &x0, lambda, rho, c).ok_or_else(|| Error::Solver("objective undefined at the start point".into()))?;
    let mut x = x0;
    let mut iters = 0;
    let mut stall = 0;
    while iters < settings.max_inner {
        if inf_norm(&gx) <= settings.grad_tol {
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i], &gx)).collect();
        if dot(&d, &gx) >= 0.0 {
            reset(h);
            d = gx.iter().map(|v| -v).collect();
        }
        let Some(pt) = line_search(p, &x, fx, &gx, &d, lambda, rho, c) else {
            if h.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, v)| *v == if i == j { 1.0 } else { 0.0 })) {
                break;
            }
            reset(h);
            stall += 1;
            if stall > 2 {
                break;
            }
            continue;
        };
        iters += 1;
        let s: Vec<f64> = pt.0.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = pt.2.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if iters == 1 || h_is_identity(h) {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = if i == j { scale } else { 0.0 };
                    }
                }
            }
            update_inverse_hessian(h, &s, &y, sy);
        }
        let decrease = fx - pt.1;
        x = pt.0;
        fx = pt.1;
        gx = pt.2;
        ex = pt.3;
        if decrease.abs() <= 1e-15 * fx.abs().max(1.0) {
            stall += 1;
            if stall > 3 {
                break;
            }
        } else {
            stall = 0;
        }
    }
    Ok(((x, fx, gx, ex), iters))
}

fn reset(h: &mut [Vec<f64>]) {
    for (i, row) in h.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 1.0 } else { 0.0 };
        }
    }
}

fn h_is_identity(h: &[Vec<f64>]) -> bool {
    h.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, v)| *v == if i == j { 1.0 } else { 0.0 }))
}

/// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ with ρ = 1/(yᵀs).
fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + r * yhy) * r * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Solves min f(z) subject to g(z) ≤ 0 from the start point `z0`.
pub fn solve<P: ConstrainedProblem + ?Sized>(p: &P, z0: &[f64], settings: &SolverSettings) -> Result<SolverReport> {
    settings.validate()?;
    if z0.len() != p.dim() {
        return Err(Error::invalid("z0", "length differs from problem dimension"));
    }
    let mut c = Counter { evals: 0 };
    let first = p.evaluate(z0)?;
    c.evals += 1;
    let m = first.g.len();
    let mut lambda = vec![0.0; m];
    let mut rho = settings.penalty_init;
    let mut x = z0.to_vec();
    let mut h = vec![vec![0.0; x.len()]; x.len()];
    reset(&mut h);
    let mut inner_total = 0;
    let mut prev_violation = max_violation(&first.g);
    let mut last = first;
    let mut outer = 0;
    let mut converged = false;
    while outer < settings.max_outer {
        outer += 1;
        let ((xn, _, gn, en), it) = bfgs(p, x, &lambda, rho, settings, &mut h, &mut c)?;
        inner_total += it;
        x = xn;
        let viol = max_violation(&en.g);
        let grad_ok = inf_norm(&gn) <= settings.grad_tol * 10.0;
        for (l, g) in lambda.iter_mut().zip(&en.g) {
            *l = (*l + rho * g).max(0.0);
        }
        last = en;
        if viol <= settings.constraint_tol && grad_ok {
            converged = true;
            break;
        }
        if viol > 0.25 * prev_violation && viol > settings.constraint_tol && rho < settings.penalty_max {
            rho = (rho * settings.penalty_growth).min(settings.penalty_max);
            reset(&mut h);
        }
        prev_violation = viol;
    }
    let max_v = max_violation(&last.g);
    Ok(SolverReport {
        z: x,
        f: last.f,
        max_violation: max_v,
        multipliers: lambda,
        outer_iterations: outer,
        inner_iterations: inner_total,
        evaluations: c.evals,
        converged,
        feasible: max_v <= settings.constraint_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closure-backed problem with analytic gradients.
    struct Analytic<F, G> {
        n: usize,
        eval: F,
        grads: G,
    }

    impl<F, G> ConstrainedProblem for Analytic<F, G>
    where
        F: Fn(&[f64]) -> Evaluation,
        G: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
    {
        fn dim(&self) -> usize {
            self.n
        }
        fn evaluate(&self, z: &[f64]) -> Result<Evaluation> {
            Ok((self.eval)(z))
        }
        fn gradient(&self, z: &[f64], weights: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<(Evaluation, Vec<f64>)> {
            let e = (self.eval)(z);
            let y = weights(&e.g);
            let (gf, jg) = (self.grads)(z);
            let mut out = gf;
            for (yi, row) in y.iter().zip(&jg) {
                for (o, r) in out.iter_mut().zip(row) {
                    *o += yi * r;
                }
            }
            Ok((e, out))
        }
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let p = Analytic {
            n: 2,
            eval: |z: &[f64]| Evaluation { f: (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2), g: vec![] },
            grads: |z: &[f64]| {
                (
                    vec![
                        -2.0 * (1.0 - z[0]) - 400.0 * z[0] * (z[1] - z[0] * z[0]),
                        200.0 * (z[1] - z[0] * z[0]),
                    ],
                    vec![],
                )
            },
        };
        let r = solve(&p, &[-1.2, 1.0], &SolverSettings { grad_tol: 1e-10, ..Default::default() }).unwrap();
        assert!((r.z[0] - 1.0).abs() < 1e-6 && (r.z[1] - 1.0).abs() < 1e-6, "{:?}", r.z);
        assert!(r.converged);
    }

    #[test]
    fn projection_onto_half_plane() {
        // min |z − (2, 2)|² s.t. z0 + z1 ≤ 1 → z = (0.5, 0.5), multiplier 3.
        let p = Analytic {
            n: 2,
            eval: |z: &[f64]| Evaluation { f: (z[0] - 2.0).powi(2) + (z[1] - 2.0).powi(2), g: vec![z[0] + z[1] - 1.0] },
            grads: |z: &[f64]| (vec![2.0 * (z[0] - 2.0), 2.0 * (z[1] - 2.0)], vec![vec![1.0, 1.0]]),
        };
        let r = solve(&p, &[0.0, 0.0], &SolverSettings::default()).unwrap();
        assert!((r.z[0] - 0.5).abs() < 1e-6 && (r.z[1] - 0.5).abs() < 1e-6);
        assert!((r.multipliers[0] - 3.0).abs() < 1e-4);
        assert!(r.max_violation <= 1e-7);
    }

    #[test]
    fn inactive_constraint_keeps_unconstrained_minimum() {
        let p = Analytic {
            n: 1,
            eval: |z: &[f64]| Evaluation { f: (z[0] - 0.3).powi(2), g: vec![z[0] - 1.0, -z[0] - 1.0] },
            grads: |z: &[f64]| (vec![2.0 * (z[0] - 0.3)], vec![vec![1.0], vec![-1.0]]),
        };
        let r = solve(&p, &[0.9], &SolverSettings::default()).unwrap();
        assert!((r.z[0] - 0.3).abs() < 1e-7);
        assert_eq!(r.multipliers, vec![0.0, 0.0]);
    }

    #[test]
    fn nonlinear_constraint() {
        // min z0 + z1 on the unit disk → (−1/√2, −1/√2).
        let p = Analytic {
            n: 2,
            eval: |z: &[f64]| Evaluation { f: z[0] + z[1], g: vec![z[0] * z[0] + z[1] * z[1] - 1.0] },
            grads: |z: &[f64]| (vec![1.0, 1.0], vec![vec![2.0 * z[0], 2.0 * z[1]]]),
        };
        let r = solve(&p, &[0.1, 0.0], &SolverSettings::default()).unwrap();
        let s = -std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.z[0] - s).abs() < 1e-6 && (r.z[1] - s).abs() < 1e-6, "{:?}", r);
        assert!(r.max_violation <= 1e-7);
    }

    #[test]
    fn settings_validation() {
        assert!(SolverSettings { penalty_growth: 1.0, ..Default::default() }.validate().is_err());
        assert!(SolverSettings { max_inner: 0, ..Default::default() }.validate().is_err());
    }
}
