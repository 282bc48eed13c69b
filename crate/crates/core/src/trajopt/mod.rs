//! B-spline transcription of the point-to-point motion problem.
//!
//! Joint strokes are clamped B-splines on a normalized horizon u = t / t_M.
//! The first two and last two control points follow from the boundary
//! positions and velocities, the remaining control points and t_M are the
//! decision variables. Criteria and path constraints are evaluated at M + 1
//! uniform collocation instants.

pub mod nlp;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use nlp::{ConstrainedProblem, Evaluation, SolverReport, SolverSettings};

use crate::error::{Error, Result};
use crate::io::{csv_row, fmt_sig};
use crate::manipulator::{rnea, ChainModel};
use crate::spline::{BSplineBasis, SplineTrajectory, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineSettings {
    pub degree: usize,
    /// Control points per joint.
    pub n_ctrl: usize,
    /// Number of partitions; M + 1 collocation instants.
    pub m: usize,
}

impl Default for SplineSettings {
    fn default() -> Self {
        SplineSettings { degree: 5, n_ctrl: 12, m: 50 }
    }
}

/// Weights, boundary states and limits of one inner problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlpProblem {
    /// Weights of (effort, power).
    pub weights: Vec<f64>,
    pub q_initial: Vec<f64>,
    pub q_final: Vec<f64>,
    pub qd_initial: Vec<f64>,
    pub qd_final: Vec<f64>,
    pub q_lower: Vec<f64>,
    pub q_upper: Vec<f64>,
    pub qd_lower: Vec<f64>,
    pub qd_upper: Vec<f64>,
    pub f_lower: Vec<f64>,
    pub f_upper: Vec<f64>,
    pub v_lower: Vec<f64>,
    pub v_upper: Vec<f64>,
    pub t_m_lower: f64,
    pub t_m_upper: f64,
    #[serde(default)]
    pub spline: SplineSettings,
    #[serde(default)]
    pub solver: SolverSettings,
}

/// Number of criteria.
pub const N_CRITERIA: usize = 2;

impl NlpProblem {
    pub fn validate(&self, n_joints: usize) -> Result<()> {
        if self.weights.len() != N_CRITERIA {
            return Err(Error::invalid("weights", format!("expected {N_CRITERIA} entries")));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights", "must be finite and non-negative"));
        }
        let vecs = [
            ("q_initial", &self.q_initial),
            ("q_final", &self.q_final),
            ("qd_initial", &self.qd_initial),
            ("qd_final", &self.qd_final),
            ("q_lower", &self.q_lower),
            ("q_upper", &self.q_upper),
            ("qd_lower", &self.qd_lower),
            ("qd_upper", &self.qd_upper),
            ("f_lower", &self.f_lower),
            ("f_upper", &self.f_upper),
            ("v_lower", &self.v_lower),
            ("v_upper", &self.v_upper),
        ];
        for (what, v) in vecs {
            if v.len() != n_joints {
                return Err(Error::invalid(what, format!("expected {n_joints} entries, got {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(what.into()));
            }
        }
        for (what, lo, hi) in [
            ("q", &self.q_lower, &self.q_upper),
            ("qd", &self.qd_lower, &self.qd_upper),
            ("f", &self.f_lower, &self.f_upper),
            ("v", &self.v_lower, &self.v_upper),
        ] {
            if lo.iter().zip(hi).any(|(l, h)| l > h) {
                return Err(Error::invalid(what, "lower bound above upper bound"));
            }
        }
        if !(self.t_m_lower > 0.0 && self.t_m_lower <= self.t_m_upper && self.t_m_upper.is_finite()) {
            return Err(Error::invalid("t_m", "need 0 < t_m_lower <= t_m_upper"));
        }
        let (vl, vu) = self.velocity_bounds();
        for i in 0..n_joints {
            for (what, q) in [("q_initial", self.q_initial[i]), ("q_final", self.q_final[i])] {
                if q < self.q_lower[i] || q > self.q_upper[i] {
                    return Err(Error::invalid(what, format!("joint {i} outside position limits")));
                }
            }
            for (what, v) in [("qd_initial", self.qd_initial[i]), ("qd_final", self.qd_final[i])] {
                if v < vl[i] || v > vu[i] {
                    return Err(Error::invalid(what, format!("joint {i} outside velocity limits")));
                }
            }
            if vl[i] > vu[i] {
                return Err(Error::invalid("v", format!("joint {i}: joint and actuator velocity limits do not overlap")));
            }
        }
        if self.spline.m < 1 {
            return Err(Error::invalid("m", "needs at least one partition"));
        }
        if self.spline.degree < 3 {
            return Err(Error::invalid("degree", "must be at least 3"));
        }
        if self.spline.n_ctrl < self.spline.degree + 1 || self.spline.n_ctrl < 4 {
            return Err(Error::invalid("n_ctrl", "needs at least degree + 1 control points"));
        }
        self.solver.validate()
    }

    /// Intersection of the joint-rate and actuator-velocity limits.
    pub fn velocity_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.qd_lower.iter().zip(&self.v_lower).map(|(a, b)| a.max(*b)).collect();
        let hi = self.qd_upper.iter().zip(&self.v_upper).map(|(a, b)| a.min(*b)).collect();
        (lo, hi)
    }

    fn free_time(&self) -> bool {
        self.t_m_upper > self.t_m_lower
    }
}

/// ψ₁ = ½ Δt Σ_k f_kᵀ f_k.
pub fn criterion_effort(dt: f64, f_x: &[Vec<f64>]) -> f64 {
    0.5 * dt * f_x.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
}

/// ψ₂ = ½ Δt Σ_k Σ_i (f_ki v_ki)².
pub fn criterion_power(dt: f64, f_x: &[Vec<f64>], v_x: &[Vec<f64>]) -> f64 {
    0.5 * dt
        * f_x
            .iter()
            .zip(v_x)
            .map(|(f, v)| f.iter().zip(v).map(|(a, b)| (a * b) * (a * b)).sum::<f64>())
            .sum::<f64>()
}

/// Largest scaled violation per constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub position: f64,
    pub velocity: f64,
    pub force: f64,
    pub final_time: f64,
    /// Largest absolute mismatch of the boundary positions and velocities.
    pub boundary: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.position.max(self.velocity).max(self.force).max(self.final_time).max(self.boundary)
    }
}

/// Sampled optimal trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub weights: Vec<f64>,
    pub control_points: Vec<Vec<f64>>,
    pub degree: usize,
    pub t_m: f64,
    pub dt: f64,
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub qdd: Vec<Vec<f64>>,
    pub v_x: Vec<Vec<f64>>,
    pub f_x: Vec<Vec<f64>>,
    pub power: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub cost: f64,
    pub residuals: ConstraintResiduals,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl TrajectoryResult {
    pub fn n_joints(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    pub fn spline(&self) -> Result<SplineTrajectory> {
        let basis = BSplineBasis::clamped_uniform(self.degree, self.control_points.len())?;
        SplineTrajectory::new(basis, self.control_points.clone(), 0.0, self.t_m)
    }

    /// CSV with columns t, q, dq, vx, fx, p per joint.
    pub fn to_csv(&self) -> String {
        let n = self.n_joints();
        let mut head = vec!["t".to_string()];
        for prefix in ["q", "dq", "vx", "fx", "p"] {
            head.extend((1..=n).map(|i| format!("{prefix}{i}")));
        }
        let mut out = head.join(",");
        out.push('\n');
        for k in 0..self.t.len() {
            let mut row = vec![self.t[k]];
            for block in [&self.q, &self.qd, &self.v_x, &self.f_x, &self.power] {
                row.extend_from_slice(&block[k]);
            }
            out.push_str(&csv_row(&row));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trajectory result serializes")
    }

    /// Samples a given spline on `m` partitions without optimizing.
    ///
    /// Criteria use `weights`; solver counters are zero and residuals only
    /// cover the boundary mismatch, which is zero by construction.
    pub fn from_control_points(
        model: &ChainModel,
        degree: usize,
        control_points: Vec<Vec<f64>>,
        t_m: f64,
        m: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let basis = BSplineBasis::clamped_uniform(degree, control_points.len())?;
        let spl = SplineTrajectory::new(basis, control_points.clone(), 0.0, t_m)?;
        let grid = TimeGrid::new(0.0, t_m, m)?;
        let s = sample_trajectory(model, &spl, &grid)?;
        let dt = grid.dt();
        let psi = vec![criterion_effort(dt, &s.f_x), criterion_power(dt, &s.f_x, &s.qd)];
        if weights.len() != psi.len() {
            return Err(Error::invalid("weights", format!("expected {N_CRITERIA} entries")));
        }
        let cost = weights.iter().zip(&psi).map(|(w, p)| w * p).sum();
        let power = s.f_x.iter().zip(&s.qd).map(|(f, v)| f.iter().zip(v).map(|(a, b)| a * b).collect()).collect();
        Ok(TrajectoryResult {
            weights,
            control_points,
            degree,
            t_m,
            dt,
            t: (0..=m).map(|k| dt * k as f64).collect(),
            v_x: s.qd.clone(),
            q: s.q,
            qd: s.qd,
            qdd: s.qdd,
            f_x: s.f_x,
            power,
            psi,
            cost,
            residuals: ConstraintResiduals::default(),
            outer_iterations: 0,
            inner_iterations: 0,
            evaluations: 0,
            converged: false,
        })
    }
}

/// Collocation samples of a spline trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub qdd: Vec<Vec<f64>>,
    pub f_x: Vec<Vec<f64>>,
}

/// Evaluates a spline on `grid` and runs the inverse dynamics at every instant.
pub fn sample_trajectory(model: &ChainModel, spl: &SplineTrajectory, grid: &TimeGrid) -> Result<Samples> {
    let t = grid.instants();
    let rows = t
        .par_iter()
        .map(|tk| {
            let (q, qd, qdd) = crate::spline::eval_trajectory(spl, *tk)?;
            let f = rnea(model, &q, &qd, &qdd)?.f_x;
            Ok((q, qd, qdd, f))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut s = Samples { t, q: vec![], qd: vec![], qdd: vec![], f_x: vec![] };
    for (q, qd, qdd, f) in rows {
        s.q.push(q);
        s.qd.push(qd);
        s.qdd.push(qdd);
        s.f_x.push(f);
    }
    Ok(s)
}

/// RNEA forces with their Jacobians in q, q̇ and q̈.
struct PointJacobian {
    f: Vec<f64>,
    jq: DMatrix<f64>,
    jqd: DMatrix<f64>,
    jqdd: DMatrix<f64>,
}

fn rnea_jacobian(model: &ChainModel, q: &[f64], qd: &[f64], qdd: &[f64]) -> Result<PointJacobian> {
    let n = q.len();
    let f = rnea(model, q, qd, qdd)?.f_x;
    let mut jq = DMatrix::zeros(n, n);
    let mut jqd = DMatrix::zeros(n, n);
    let mut jqdd = DMatrix::zeros(n, n);
    // Forces are affine in q̈ and quadratic in q̇, so these differences are exact.
    for l in 0..n {
        let mut a = qdd.to_vec();
        a[l] += 1.0;
        let fp = rnea(model, q, qd, &a)?.f_x;
        for i in 0..n {
            jqdd[(i, l)] = fp[i] - f[i];
        }
        let h = 0.01;
        let (mut vp, mut vm) = (qd.to_vec(), qd.to_vec());
        vp[l] += h;
        vm[l] -= h;
        let (fp, fm) = (rnea(model, q, &vp, qdd)?.f_x, rnea(model, q, &vm, qdd)?.f_x);
        for i in 0..n {
            jqd[(i, l)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        let h = 1e-6;
        let (mut xp, mut xm) = (q.to_vec(), q.to_vec());
        xp[l] += h;
        xm[l] -= h;
        let (fp, fm) = (rnea(model, &xp, qd, qdd)?.f_x, rnea(model, &xm, qd, qdd)?.f_x);
        for i in 0..n {
            jq[(i, l)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(PointJacobian { f, jq, jqd, jqdd })
}

/// Constraint values per collocation instant and joint.
const PER_JOINT: usize = 6;

/// Maps decision vectors to trajectories, criteria and scaled constraints.
pub struct Transcription<'a> {
    model: &'a ChainModel,
    prob: &'a NlpProblem,
    basis: BSplineBasis,
    /// Basis values and u-derivatives at the collocation instants.
    bu: [DMatrix<f64>; 3],
    n: usize,
    na: usize,
    /// u-derivatives of the first two and last two basis functions at the ends.
    d_start: (f64, f64),
    d_end: (f64, f64),
    q_scale: Vec<f64>,
    v_lo: Vec<f64>,
    v_hi: Vec<f64>,
    scale_q: Vec<f64>,
    scale_v: Vec<f64>,
    scale_f: Vec<f64>,
    objective_scale: f64,
}

fn bound_scale(lo: f64, hi: f64) -> f64 {
    lo.abs().max(hi.abs()).max(1e-9)
}

/// Decoded decision vector.
struct Decoded {
    c: Vec<Vec<f64>>,
    t_m: f64,
}

impl<'a> Transcription<'a> {
    pub fn new(model: &'a ChainModel, prob: &'a NlpProblem) -> Result<Self> {
        let na = model.n_joints();
        prob.validate(na)?;
        let sp = prob.spline;
        let basis = BSplineBasis::clamped_uniform(sp.degree, sp.n_ctrl)?;
        let n = sp.n_ctrl;
        let rows = sp.m + 1;
        let mut bu = [DMatrix::zeros(rows, n), DMatrix::zeros(rows, n), DMatrix::zeros(rows, n)];
        for k in 0..rows {
            let vals = basis.eval(k as f64 / sp.m as f64)?;
            for (d, v) in vals.iter().enumerate() {
                for j in 0..n {
                    bu[d][(k, j)] = v[j];
                }
            }
        }
        let [_, d0, _] = basis.eval(0.0)?;
        let [_, d1, _] = basis.eval(1.0)?;
        let (v_lo, v_hi) = prob.velocity_bounds();
        let mut tr = Transcription {
            model,
            prob,
            basis,
            n,
            na,
            d_start: (d0[0], d0[1]),
            d_end: (d1[n - 2], d1[n - 1]),
            q_scale: (0..na).map(|i| (prob.q_upper[i] - prob.q_lower[i]).max(1e-3)).collect(),
            scale_q: (0..na).map(|i| bound_scale(prob.q_lower[i], prob.q_upper[i])).collect(),
            scale_v: (0..na).map(|i| bound_scale(v_lo[i], v_hi[i])).collect(),
            scale_f: (0..na).map(|i| bound_scale(prob.f_lower[i], prob.f_upper[i])).collect(),
            v_lo,
            v_hi,
            bu,
            objective_scale: 1.0,
        };
        let z0 = tr.initial_guess();
        let (psi, _) = tr.criteria(&z0)?;
        let j0 = tr.weighted(&psi);
        if j0.is_finite() && j0 > 0.0 {
            tr.objective_scale = j0;
        }
        Ok(tr)
    }

    fn free_rows(&self) -> std::ops::Range<usize> {
        2..self.n - 2
    }

    pub fn dim(&self) -> usize {
        self.free_rows().len() * self.na + usize::from(self.prob.free_time())
    }

    fn weighted(&self, psi: &[f64]) -> f64 {
        self.prob.weights.iter().zip(psi).map(|(w, p)| w * p).sum()
    }

    /// Straight-line control points and the mid-range final time.
    pub fn initial_guess(&self) -> Vec<f64> {
        let p = self.prob;
        let mut z = Vec::with_capacity(self.dim());
        for r in self.free_rows() {
            let s = r as f64 / (self.n - 1) as f64;
            for i in 0..self.na {
                z.push((p.q_initial[i] + s * (p.q_final[i] - p.q_initial[i])) / self.q_scale[i]);
            }
        }
        if p.free_time() {
            z.push(0.5);
        }
        z
    }

    /// Decision vector reproducing the free control points and final time of `r`.
    ///
    /// Fails when the result's spline layout differs from this problem.
    pub fn encode(&self, r: &TrajectoryResult) -> Result<Vec<f64>> {
        if r.control_points.len() != self.n || r.degree != self.basis.degree() || r.n_joints() != self.na {
            return Err(Error::invalid("warm start", "spline layout does not match the problem"));
        }
        let mut z = Vec::with_capacity(self.dim());
        for row in &r.control_points[self.free_rows()] {
            for i in 0..self.na {
                z.push(row[i] / self.q_scale[i]);
            }
        }
        let p = self.prob;
        if p.free_time() {
            z.push(((r.t_m - p.t_m_lower) / (p.t_m_upper - p.t_m_lower)).clamp(0.0, 1.0));
        }
        Ok(z)
    }

    fn decode(&self, z: &[f64]) -> Decoded {
        let p = self.prob;
        let t_m = if p.free_time() {
            p.t_m_lower + (p.t_m_upper - p.t_m_lower) * z[z.len() - 1]
        } else {
            p.t_m_lower
        };
        let mut c = vec![vec![0.0; self.na]; self.n];
        for (k, r) in self.free_rows().enumerate() {
            for i in 0..self.na {
                c[r][i] = z[k * self.na + i] * self.q_scale[i];
            }
        }
        let n = self.n;
        for i in 0..self.na {
            c[0][i] = p.q_initial[i];
            c[1][i] = (p.qd_initial[i] * t_m - self.d_start.0 * c[0][i]) / self.d_start.1;
            c[n - 1][i] = p.q_final[i];
            c[n - 2][i] = (p.qd_final[i] * t_m - self.d_end.1 * c[n - 1][i]) / self.d_end.0;
        }
        Decoded { c, t_m }
    }

    fn kinematics(&self, d: &Decoded) -> [Vec<Vec<f64>>; 3] {
        let rows = self.prob.spline.m + 1;
        let scale = [1.0, 1.0 / d.t_m, 1.0 / (d.t_m * d.t_m)];
        let mut out = [vec![vec![0.0; self.na]; rows], vec![vec![0.0; self.na]; rows], vec![vec![0.0; self.na]; rows]];
        for (o, (b, s)) in out.iter_mut().zip(self.bu.iter().zip(scale)) {
            for (k, row) in o.iter_mut().enumerate() {
                for (j, cj) in d.c.iter().enumerate() {
                    let w = b[(k, j)] * s;
                    if w != 0.0 {
                        for i in 0..self.na {
                            row[i] += w * cj[i];
                        }
                    }
                }
            }
        }
        out
    }

    fn dt(&self, t_m: f64) -> f64 {
        t_m / self.prob.spline.m as f64
    }

    fn forces(&self, q: &[Vec<f64>], qd: &[Vec<f64>], qdd: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        (0..q.len())
            .into_par_iter()
            .map(|k| Ok(rnea(self.model, &q[k], &qd[k], &qdd[k])?.f_x))
            .collect()
    }

    fn criteria(&self, z: &[f64]) -> Result<([f64; 2], Vec<Vec<f64>>)> {
        let d = self.decode(z);
        let [q, qd, qdd] = self.kinematics(&d);
        let f = self.forces(&q, &qd, &qdd)?;
        let dt = self.dt(d.t_m);
        Ok(([criterion_effort(dt, &f), criterion_power(dt, &f, &qd)], f))
    }

    fn constraint_values(&self, q: &[Vec<f64>], qd: &[Vec<f64>], f: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
        let p = self.prob;
        let mut g = Vec::with_capacity(q.len() * self.na * PER_JOINT + 2);
        for k in 0..q.len() {
            for i in 0..self.na {
                g.push((p.q_lower[i] - q[k][i]) / self.scale_q[i]);
                g.push((q[k][i] - p.q_upper[i]) / self.scale_q[i]);
                g.push((self.v_lo[i] - qd[k][i]) / self.scale_v[i]);
                g.push((qd[k][i] - self.v_hi[i]) / self.scale_v[i]);
                g.push((p.f_lower[i] - f[k][i]) / self.scale_f[i]);
                g.push((f[k][i] - p.f_upper[i]) / self.scale_f[i]);
            }
        }
        if p.free_time() {
            let s = z[z.len() - 1];
            g.push(-s);
            g.push(s - 1.0);
        }
        g
    }

    /// Trajectory samples and diagnostics for a decision vector.
    pub fn result(&self, z: &[f64], report: Option<&SolverReport>) -> Result<TrajectoryResult> {
        let d = self.decode(z);
        let [q, qd, qdd] = self.kinematics(&d);
        let f = self.forces(&q, &qd, &qdd)?;
        let dt = self.dt(d.t_m);
        let psi = vec![criterion_effort(dt, &f), criterion_power(dt, &f, &qd)];
        let cost = self.weighted(&psi);
        let g = self.constraint_values(&q, &qd, &f, z);
        let mut res = ConstraintResiduals::default();
        let rows = q.len() * self.na * PER_JOINT;
        for (idx, v) in g[..rows].iter().enumerate() {
            let slot = match (idx % PER_JOINT) / 2 {
                0 => &mut res.position,
                1 => &mut res.velocity,
                _ => &mut res.force,
            };
            *slot = slot.max(*v);
        }
        for v in &g[rows..] {
            res.final_time = res.final_time.max(*v);
        }
        let last = q.len() - 1;
        let p = self.prob;
        for i in 0..self.na {
            for v in [
                q[0][i] - p.q_initial[i],
                q[last][i] - p.q_final[i],
                qd[0][i] - p.qd_initial[i],
                qd[last][i] - p.qd_final[i],
            ] {
                res.boundary = res.boundary.max(v.abs());
            }
        }
        let t: Vec<f64> = (0..q.len()).map(|k| dt * k as f64).collect();
        let power = f.iter().zip(&qd).map(|(fk, vk)| fk.iter().zip(vk).map(|(a, b)| a * b).collect()).collect();
        let (oi, ii, ev, conv) = report.map_or((0, 0, 0, false), |r| {
            (r.outer_iterations, r.inner_iterations, r.evaluations, r.converged)
        });
        Ok(TrajectoryResult {
            weights: p.weights.clone(),
            control_points: d.c,
            degree: self.basis.degree(),
            t_m: d.t_m,
            dt,
            t,
            q,
            v_x: qd.clone(),
            qd,
            qdd,
            f_x: f,
            power,
            psi,
            cost,
            residuals: res,
            outer_iterations: oi,
            inner_iterations: ii,
            evaluations: ev,
            converged: conv && res.max() <= 1e-6,
        })
    }
}

impl ConstrainedProblem for Transcription<'_> {
    fn dim(&self) -> usize {
        Transcription::dim(self)
    }

    fn evaluate(&self, z: &[f64]) -> Result<Evaluation> {
        let d = self.decode(z);
        let [q, qd, qdd] = self.kinematics(&d);
        let f = self.forces(&q, &qd, &qdd)?;
        let dt = self.dt(d.t_m);
        let psi = [criterion_effort(dt, &f), criterion_power(dt, &f, &qd)];
        Ok(Evaluation { f: self.weighted(&psi) / self.objective_scale, g: self.constraint_values(&q, &qd, &f, z) })
    }

    fn gradient(&self, z: &[f64], weights: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<(Evaluation, Vec<f64>)> {
        let d = self.decode(z);
        let [q, qd, qdd] = self.kinematics(&d);
        let rows = q.len();
        let jac = (0..rows)
            .into_par_iter()
            .map(|k| rnea_jacobian(self.model, &q[k], &qd[k], &qdd[k]))
            .collect::<Result<Vec<_>>>()?;
        let f: Vec<Vec<f64>> = jac.iter().map(|j| j.f.clone()).collect();
        let dt = self.dt(d.t_m);
        let psi = [criterion_effort(dt, &f), criterion_power(dt, &f, &qd)];
        let g = self.constraint_values(&q, &qd, &f, z);
        let y = weights(&g);
        let js = self.objective_scale;
        let (w1, w2) = (self.prob.weights[0] / js, self.prob.weights[1] / js);
        let na = self.na;
        let t = d.t_m;

        // Partials of the augmented function with respect to q, q̇ and q̈ at each instant.
        let mut gq = vec![vec![0.0; na]; rows];
        let mut gqd = vec![vec![0.0; na]; rows];
        let mut gqdd = vec![vec![0.0; na]; rows];
        for k in 0..rows {
            let mut df = vec![0.0; na];
            for i in 0..na {
                let base = (k * na + i) * PER_JOINT;
                let (fk, vk) = (f[k][i], qd[k][i]);
                df[i] = w1 * dt * fk + w2 * dt * fk * vk * vk + (y[base + 5] - y[base + 4]) / self.scale_f[i];
                gq[k][i] = (y[base + 1] - y[base]) / self.scale_q[i];
                gqd[k][i] = w2 * dt * fk * fk * vk + (y[base + 3] - y[base + 2]) / self.scale_v[i];
            }
            let j = &jac[k];
            for l in 0..na {
                for i in 0..na {
                    gq[k][l] += j.jq[(i, l)] * df[i];
                    gqd[k][l] += j.jqd[(i, l)] * df[i];
                    gqdd[k][l] += j.jqdd[(i, l)] * df[i];
                }
            }
        }
        // Chain to the control points and the final time.
        let mut gc = vec![vec![0.0; na]; self.n];
        let mut g_t = 0.0;
        for k in 0..rows {
            for (j, gcj) in gc.iter_mut().enumerate() {
                let (b0, b1, b2) = (self.bu[0][(k, j)], self.bu[1][(k, j)] / t, self.bu[2][(k, j)] / (t * t));
                if b0 == 0.0 && b1 == 0.0 && b2 == 0.0 {
                    continue;
                }
                for i in 0..na {
                    gcj[i] += gq[k][i] * b0 + gqd[k][i] * b1 + gqdd[k][i] * b2;
                }
            }
            for i in 0..na {
                g_t -= gqd[k][i] * qd[k][i] / t + 2.0 * gqdd[k][i] * qdd[k][i] / t;
            }
        }
        let p = self.prob;
        // ψ is proportional to Δt = t_M / M.
        g_t += (w1 * psi[0] + w2 * psi[1]) / t;
        let n = self.n;
        for i in 0..na {
            g_t += gc[1][i] * p.qd_initial[i] / self.d_start.1 + gc[n - 2][i] * p.qd_final[i] / self.d_end.0;
        }
        let mut grad = Vec::with_capacity(z.len());
        for r in self.free_rows() {
            for i in 0..na {
                grad.push(gc[r][i] * self.q_scale[i]);
            }
        }
        if p.free_time() {
            let last = g.len();
            g_t *= p.t_m_upper - p.t_m_lower;
            grad.push(g_t + y[last - 1] - y[last - 2]);
        }
        let e = Evaluation { f: (w1 * psi[0] + w2 * psi[1]), g };
        Ok((e, grad))
    }
}

/// Solves the inner problem from the straight-line initial guess.
pub fn solve_inner(model: &ChainModel, prob: &NlpProblem) -> Result<TrajectoryResult> {
    let tr = Transcription::new(model, prob)?;
    let z0 = tr.initial_guess();
    let report = nlp::solve(&tr, &z0, &prob.solver)?;
    tr.result(&report.z, Some(&report))
}

/// Solves the inner problem starting from a previous solution.
pub fn solve_inner_from(model: &ChainModel, prob: &NlpProblem, start: &TrajectoryResult) -> Result<TrajectoryResult> {
    let tr = Transcription::new(model, prob)?;
    let z0 = tr.encode(start)?;
    let report = nlp::solve(&tr, &z0, &prob.solver)?;
    tr.result(&report.z, Some(&report))
}

/// Re-samples a returned trajectory on a grid with `m` partitions.
pub fn resample(model: &ChainModel, result: &TrajectoryResult, m: usize) -> Result<Samples> {
    let spl = result.spline()?;
    sample_trajectory(model, &spl, &TimeGrid::new(0.0, result.t_m, m)?)
}

/// Formats a one-line summary used by the CLI log.
pub fn summary(r: &TrajectoryResult) -> String {
    format!(
        "t_M={} psi1={} psi2={} cost={} max_residual={} converged={}",
        fmt_sig(r.t_m),
        fmt_sig(r.psi[0]),
        fmt_sig(r.psi[1]),
        fmt_sig(r.cost),
        fmt_sig(r.residuals.max()),
        r.converged
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{default_manipulator, default_task};

    fn small_task() -> NlpProblem {
        let mut p = default_task();
        p.spline = SplineSettings { degree: 5, n_ctrl: 8, m: 20 };
        p
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = default_manipulator();
        let prob = small_task();
        let tr = Transcription::new(&model, &prob).unwrap();
        let mut z = tr.initial_guess();
        for (k, v) in z.iter_mut().enumerate() {
            *v += 0.01 * ((k as f64) * 0.7).sin();
        }
        let ng = tr.evaluate(&z).unwrap().g.len();
        let y: Vec<f64> = (0..ng).map(|k| 0.1 * ((k % 7) as f64)).collect();
        let yy = y.clone();
        let (_, grad) = tr.gradient(&z, &move |_| yy.clone()).unwrap();
        let lag = |z: &[f64]| {
            let e = tr.evaluate(z).unwrap();
            e.f + e.g.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
        };
        for l in 0..z.len() {
            let h = 1e-6;
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[l] += h;
            zm[l] -= h;
            let fd = (lag(&zp) - lag(&zm)) / (2.0 * h);
            let tol = 1e-5 * (1.0 + fd.abs());
            assert!((grad[l] - fd).abs() < tol, "component {l}: {} vs {fd}", grad[l]);
        }
    }

    #[test]
    fn boundary_rows_reproduce_boundary_states() {
        let model = default_manipulator();
        let mut prob = small_task();
        prob.qd_initial = vec![0.01, -0.02, 0.05];
        prob.qd_final = vec![-0.03, 0.0, 0.1];
        let tr = Transcription::new(&model, &prob).unwrap();
        let mut z = tr.initial_guess();
        z[3] += 0.1;
        let r = tr.result(&z, None).unwrap();
        assert!(r.residuals.boundary < 1e-12, "{}", r.residuals.boundary);
    }

    #[test]
    fn stationary_problem_without_gravity_is_trivial() {
        let model = default_manipulator().with_gravity([0.0; 3]).unwrap();
        let mut prob = small_task();
        prob.q_final = prob.q_initial.clone();
        let r = solve_inner(&model, &prob).unwrap();
        assert!(r.cost.abs() < 1e-12, "cost {}", r.cost);
        for row in &r.q {
            for (a, b) in row.iter().zip(&prob.q_initial) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(r.residuals.max() <= 1e-6);
    }

    #[test]
    fn weight_scaling_leaves_solution_unchanged() {
        let model = default_manipulator();
        let mut prob = small_task();
        prob.weights = vec![0.3, 0.7];
        let a = solve_inner(&model, &prob).unwrap();
        prob.weights = vec![0.6, 1.4];
        let b = solve_inner(&model, &prob).unwrap();
        assert!(a.converged && b.converged);
        let scale = a.q.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = a.q.iter().flatten().zip(b.q.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= 1e-6 * scale.max(1.0), "diff {diff}");
    }

    #[test]
    fn single_criterion_optima_dominate_cross_evaluation() {
        let model = default_manipulator();
        let mut prob = small_task();
        prob.weights = vec![1.0, 0.0];
        let e = solve_inner(&model, &prob).unwrap();
        prob.weights = vec![0.0, 1.0];
        let p = solve_inner(&model, &prob).unwrap();
        assert!(e.converged && p.converged);
        assert!(e.psi[0] <= p.psi[0] * (1.0 + 1e-6));
        assert!(p.psi[1] <= e.psi[1] * (1.0 + 1e-6));
    }

    #[test]
    fn tight_force_limit_is_respected() {
        let model = default_manipulator();
        let mut prob = small_task();
        let free = solve_inner(&model, &prob).unwrap();
        let peak = free.f_x.iter().map(|f| f[0]).fold(f64::MIN, f64::max);
        prob.f_upper[0] = free.f_x.iter().map(|f| f[0]).fold(f64::MAX, f64::min) + 0.9 * (peak - free.f_x.iter().map(|f| f[0]).fold(f64::MAX, f64::min));
        let r = solve_inner(&model, &prob).unwrap();
        assert!(r.converged);
        let top = r.f_x.iter().map(|f| f[0]).fold(f64::MIN, f64::max);
        assert!(top <= prob.f_upper[0] * (1.0 + 1e-6), "{top} > {}", prob.f_upper[0]);
        assert!(top >= prob.f_upper[0] * (1.0 - 1e-3), "limit not active");
    }

    #[test]
    fn invalid_boundary_is_rejected() {
        let model = default_manipulator();
        let mut prob = small_task();
        prob.q_final[1] = 10.0;
        assert!(Transcription::new(&model, &prob).is_err());
        let mut prob = small_task();
        prob.weights = vec![1.0];
        assert!(Transcription::new(&model, &prob).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let model = default_manipulator();
        let prob = small_task();
        let tr = Transcription::new(&model, &prob).unwrap();
        let r = tr.result(&tr.initial_guess(), None).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,q1,q2,q3,dq1,dq2,dq3,vx1,vx2,vx3,fx1,fx2,fx3,p1,p2,p3"
        );
        assert_eq!(lines.count(), prob.spline.m + 1);
    }
}
