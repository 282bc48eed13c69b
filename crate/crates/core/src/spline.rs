//! Clamped B-spline bases and trajectories on a normalized horizon.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Basis of `n_ctrl` B-splines of a given degree on u ∈ [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    degree: usize,
    n_ctrl: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Clamped knots with uniform interior spacing.
    pub fn clamped_uniform(degree: usize, n_ctrl: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::invalid("degree", "must be at least 1"));
        }
        if n_ctrl < degree + 1 {
            return Err(Error::invalid("n_ctrl", format!("needs at least degree + 1 = {}", degree + 1)));
        }
        let spans = n_ctrl - degree;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..spans).map(|k| k as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::from_knots(degree, knots)
    }

    /// Checks that the knot vector is non-decreasing, clamped on [0, 1] and
    /// has no interior knot of multiplicity above the degree.
    pub fn from_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::invalid("knots", "too few knots for the degree"));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("knots", "must be finite and non-decreasing"));
        }
        let n = knots.len();
        if knots[..=p].iter().any(|k| *k != 0.0) || knots[n - p - 1..].iter().any(|k| *k != 1.0) {
            return Err(Error::invalid("knots", "must be clamped to 0 and 1 with multiplicity degree + 1"));
        }
        let interior = &knots[p + 1..n - p - 1];
        if interior.iter().any(|k| *k <= 0.0 || *k >= 1.0) {
            return Err(Error::invalid("knots", "interior knots must lie strictly inside (0, 1)"));
        }
        let mut run = 1;
        for w in interior.windows(2) {
            run = if w[1] == w[0] { run + 1 } else { 1 };
            if run > p {
                return Err(Error::invalid("knots", "interior knot multiplicity exceeds the degree"));
            }
        }
        Ok(BSplineBasis { degree, n_ctrl: n - p - 1, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn span(&self, u: f64) -> usize {
        let p = self.degree;
        if u >= 1.0 {
            return self.n_ctrl - 1;
        }
        // Last index with knots[i] <= u among p..n_ctrl.
        let mut lo = p;
        let mut hi = self.n_ctrl;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// All basis values and their first two u-derivatives at `u`.
    pub fn eval(&self, u: f64) -> Result<[Vec<f64>; 3]> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("spline parameter {u} outside [0, 1]")));
        }
        let p = self.degree;
        let k = self.knots.as_slice();
        let span = self.span(u);
        // Triangular table of basis values (upper part) and knot differences (lower).
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let nd = 2.min(p);
        let mut ders = vec![vec![0.0; p + 1]; 3];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for kk in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - kk as isize;
                let pk = p - kk;
                if r >= kk {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { kk - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
                    d += a[s2][kk] * ndu[r][pk];
                }
                ders[kk][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for kk in 1..=nd {
            for v in ders[kk].iter_mut() {
                *v *= fac;
            }
            fac *= (p - kk) as f64;
        }
        let mut out = [vec![0.0; self.n_ctrl], vec![0.0; self.n_ctrl], vec![0.0; self.n_ctrl]];
        for (d, row) in out.iter_mut().enumerate() {
            for j in 0..=p {
                row[span - p + j] = ders[d][j];
            }
        }
        Ok(out)
    }
}

/// M + 1 uniform collocation instants on [t0, t_m].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_m: f64,
    pub m: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_m: f64, m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::invalid("M", "needs at least one partition"));
        }
        if !(t0.is_finite() && t_m.is_finite() && t_m > t0) {
            return Err(Error::invalid("horizon", "t_M must exceed t0"));
        }
        Ok(TimeGrid { t0, t_m, m })
    }

    pub fn dt(&self) -> f64 {
        (self.t_m - self.t0) / self.m as f64
    }

    pub fn duration(&self) -> f64 {
        self.t_m - self.t0
    }

    pub fn instants(&self) -> Vec<f64> {
        (0..=self.m).map(|k| self.t0 + self.duration() * k as f64 / self.m as f64).collect()
    }

    /// Normalized parameters u_k = k / M.
    pub fn normalized(&self) -> Vec<f64> {
        (0..=self.m).map(|k| k as f64 / self.m as f64).collect()
    }
}

/// Basis values and time derivatives at every collocation instant, (M+1) × N.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrices {
    pub b: DMatrix<f64>,
    pub db: DMatrix<f64>,
    pub ddb: DMatrix<f64>,
}

/// Evaluates the basis on the grid, derivatives taken in physical time.
pub fn basis_functions(degree: usize, n_ctrl: usize, grid: &TimeGrid) -> Result<BasisMatrices> {
    let basis = BSplineBasis::clamped_uniform(degree, n_ctrl)?;
    basis_on_grid(&basis, grid)
}

pub fn basis_on_grid(basis: &BSplineBasis, grid: &TimeGrid) -> Result<BasisMatrices> {
    let n = basis.n_ctrl();
    let rows = grid.m + 1;
    let t = grid.duration();
    let mut out = BasisMatrices {
        b: DMatrix::zeros(rows, n),
        db: DMatrix::zeros(rows, n),
        ddb: DMatrix::zeros(rows, n),
    };
    for (k, u) in grid.normalized().into_iter().enumerate() {
        let [b, db, ddb] = basis.eval(u)?;
        for j in 0..n {
            out.b[(k, j)] = b[j];
            out.db[(k, j)] = db[j] / t;
            out.ddb[(k, j)] = ddb[j] / (t * t);
        }
    }
    Ok(out)
}

/// Joint trajectory q(t) = B(t) c over [t0, t_m].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineTrajectory {
    pub basis: BSplineBasis,
    /// Control points, one row per basis function, one column per joint.
    pub control_points: Vec<Vec<f64>>,
    pub t0: f64,
    pub t_m: f64,
}

/// Position, velocity and acceleration at time `t`.
pub type JointSample = (Vec<f64>, Vec<f64>, Vec<f64>);

impl SplineTrajectory {
    pub fn new(basis: BSplineBasis, control_points: Vec<Vec<f64>>, t0: f64, t_m: f64) -> Result<Self> {
        if control_points.len() != basis.n_ctrl() {
            return Err(Error::invalid("control_points", "row count must equal the number of basis functions"));
        }
        let na = control_points.first().map_or(0, Vec::len);
        if na == 0 || control_points.iter().any(|r| r.len() != na) {
            return Err(Error::invalid("control_points", "rows must be non-empty and of equal length"));
        }
        if !(t_m > t0) {
            return Err(Error::invalid("horizon", "t_M must exceed t0"));
        }
        Ok(SplineTrajectory { basis, control_points, t0, t_m })
    }

    pub fn n_joints(&self) -> usize {
        self.control_points[0].len()
    }
}

pub fn eval_trajectory(spl: &SplineTrajectory, t: f64) -> Result<JointSample> {
    let span = spl.t_m - spl.t0;
    let eps = 1e-12 * span.max(1.0);
    if !(t >= spl.t0 - eps && t <= spl.t_m + eps) {
        return Err(Error::Domain(format!("t = {t} outside [{}, {}]", spl.t0, spl.t_m)));
    }
    let u = ((t - spl.t0) / span).clamp(0.0, 1.0);
    let [b, db, ddb] = spl.basis.eval(u)?;
    let na = spl.n_joints();
    let mut q = vec![0.0; na];
    let mut qd = vec![0.0; na];
    let mut qdd = vec![0.0; na];
    for (j, row) in spl.control_points.iter().enumerate() {
        for i in 0..na {
            q[i] += b[j] * row[i];
            qd[i] += db[j] * row[i] / span;
            qdd[i] += ddb[j] * row[i] / (span * span);
        }
    }
    Ok((q, qd, qdd))
}
