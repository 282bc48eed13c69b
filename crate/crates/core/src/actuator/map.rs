use rayon::prelude::*;
use serde_json::{json, Value};

use super::{
    dq_voltage_residual, efficiency, loss_breakdown, q_current_for_torque, rotary_linear_map,
    EmlaParams, EmlaState, LossBreakdown,
};
use crate::error::{Error, Result};
use crate::io::fmt_sig;

/// Steady operating point of the motor for a load force and velocity, with i_d = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub state: EmlaState,
    pub torque: f64,
    pub v_d: f64,
    pub v_q: f64,
    pub current_ok: bool,
    pub voltage_ok: bool,
}

impl SteadyState {
    pub fn feasible(&self) -> bool {
        self.current_ok && self.voltage_ok
    }
}

pub fn steady_state(emla: &EmlaParams, f_x: f64, v_x: f64) -> SteadyState {
    let (torque, omega) = rotary_linear_map(&emla.drivetrain, f_x, v_x);
    let i_q = q_current_for_torque(&emla.pmsm, torque, 0.0);
    let state = EmlaState { theta_m: 0.0, omega_m: omega, i_q, i_d: 0.0 };
    let (v_d, v_q) = dq_voltage_residual(&emla.pmsm, &state, 0.0, 0.0);
    SteadyState {
        state,
        torque,
        v_d,
        v_q,
        current_ok: i_q.abs() <= emla.drive.i_max,
        voltage_ok: v_d.hypot(v_q) <= emla.drive.v_max,
    }
}

/// One grid cell. `None` marks a point beyond the current or voltage limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCell {
    pub eta: Option<f64>,
    pub losses: Option<LossBreakdown>,
}

/// Steady-state efficiency over a (force, velocity) grid in the motoring quadrant.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyMap {
    pub force_axis: Vec<f64>,
    pub velocity_axis: Vec<f64>,
    /// Row-major cells, `cells[i * velocity_axis.len() + j]`.
    pub cells: Vec<MapCell>,
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::invalid(name, "needs at least two points"));
    }
    if axis.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(name, "values must be finite and non-negative"));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(name, "must be strictly increasing"));
    }
    Ok(())
}

/// Evaluates one map cell.
pub fn map_cell(emla: &EmlaParams, f_x: f64, v_x: f64) -> Result<MapCell> {
    let ss = steady_state(emla, f_x, v_x);
    if !ss.feasible() {
        return Ok(MapCell { eta: None, losses: None });
    }
    let losses = loss_breakdown(&emla.pmsm, &emla.drivetrain, &emla.drive, &ss.state, f_x, v_x)?;
    let eta = efficiency(f_x, v_x, &losses, false)?;
    Ok(MapCell { eta: Some(eta), losses: Some(losses) })
}

/// Builds the map cell by cell; cells are independent so the result does not
/// depend on the number of worker threads.
pub fn build_efficiency_map(
    emla: &EmlaParams,
    force_grid: &[f64],
    velocity_grid: &[f64],
) -> Result<EfficiencyMap> {
    emla.validate()?;
    check_axis("force_grid", force_grid)?;
    check_axis("velocity_grid", velocity_grid)?;
    let nv = velocity_grid.len();
    let cells = (0..force_grid.len() * nv)
        .into_par_iter()
        .map(|k| map_cell(emla, force_grid[k / nv], velocity_grid[k % nv]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EfficiencyMap {
        force_axis: force_grid.to_vec(),
        velocity_axis: velocity_grid.to_vec(),
        cells,
    })
}

const INFEASIBLE: &str = "infeasible";

impl EfficiencyMap {
    pub fn cell(&self, i: usize, j: usize) -> &MapCell {
        &self.cells[i * self.velocity_axis.len() + j]
    }

    pub fn eta(&self, i: usize, j: usize) -> Option<f64> {
        self.cell(i, j).eta
    }

    /// Bilinear interpolation of η at `(|f_x|, |v_x|)`.
    ///
    /// Returns `None` outside the grid or when a surrounding cell is infeasible.
    pub fn interpolate(&self, f_x: f64, v_x: f64) -> Option<f64> {
        let (f, v) = (f_x.abs(), v_x.abs());
        let (i, tf) = bracket(&self.force_axis, f)?;
        let (j, tv) = bracket(&self.velocity_axis, v)?;
        let e00 = self.eta(i, j)?;
        let e01 = self.eta(i, j + 1)?;
        let e10 = self.eta(i + 1, j)?;
        let e11 = self.eta(i + 1, j + 1)?;
        let a = e00 + (e01 - e00) * tv;
        let b = e10 + (e11 - e10) * tv;
        Some(a + (b - a) * tf)
    }

    /// η threshold above which a feasible cell belongs to the top quartile.
    pub fn top_quartile_threshold(&self) -> f64 {
        let mut v: Vec<f64> = self.cells.iter().filter_map(|c| c.eta).collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            return f64::INFINITY;
        }
        let pos = 0.75 * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }

    /// Maximum η over feasible cells and its grid location.
    pub fn peak(&self) -> Option<(f64, f64, f64)> {
        let nv = self.velocity_axis.len();
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.eta.map(|e| (e, k)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(e, k)| (e, self.force_axis[k / nv], self.velocity_axis[k % nv]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("f_x,v_x,eta,p_cu,p_co,p_sw,p_d,p_mech,p_sc,feasible\n");
        for (i, f) in self.force_axis.iter().enumerate() {
            for (j, v) in self.velocity_axis.iter().enumerate() {
                let c = self.cell(i, j);
                out.push_str(&fmt_sig(*f));
                out.push(',');
                out.push_str(&fmt_sig(*v));
                match (c.eta, c.losses) {
                    (Some(e), Some(l)) => {
                        for x in [e, l.p_cu, l.p_co, l.p_sw, l.p_d, l.p_mech, l.p_sc] {
                            out.push(',');
                            out.push_str(&fmt_sig(x));
                        }
                        out.push_str(",1\n");
                    }
                    _ => {
                        for _ in 0..7 {
                            out.push(',');
                            out.push_str(INFEASIBLE);
                        }
                        out.push_str(",0\n");
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let nf = self.force_axis.len();
        let nv = self.velocity_axis.len();
        let matrix = |get: &dyn Fn(&MapCell) -> Option<f64>| -> Value {
            Value::Array(
                (0..nf)
                    .map(|i| {
                        Value::Array(
                            (0..nv)
                                .map(|j| match get(self.cell(i, j)) {
                                    Some(x) => json!(x),
                                    None => json!(INFEASIBLE),
                                })
                                .collect(),
                        )
                    })
                    .collect(),
            )
        };
        json!({
            "force_axis": self.force_axis,
            "velocity_axis": self.velocity_axis,
            "eta": matrix(&|c| c.eta),
            "p_sw": matrix(&|c| c.losses.map(|l| l.p_sw)),
            "p_d": matrix(&|c| c.losses.map(|l| l.p_d)),
            "p_cu": matrix(&|c| c.losses.map(|l| l.p_cu)),
            "p_hys": matrix(&|c| c.losses.map(|l| l.p_hys)),
            "p_eddy": matrix(&|c| c.losses.map(|l| l.p_eddy)),
            "p_add": matrix(&|c| c.losses.map(|l| l.p_add)),
            "p_mech": matrix(&|c| c.losses.map(|l| l.p_mech)),
            "p_sc": matrix(&|c| c.losses.map(|l| l.p_sc)),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let axis = |key: &str| -> Result<Vec<f64>> {
            serde_json::from_value(v.get(key).cloned().unwrap_or(Value::Null))
                .map_err(|e| Error::Config(format!("map field `{key}`: {e}")))
        };
        let force_axis = axis("force_axis")?;
        let velocity_axis = axis("velocity_axis")?;
        check_axis("force_axis", &force_axis)?;
        check_axis("velocity_axis", &velocity_axis)?;
        let (nf, nv) = (force_axis.len(), velocity_axis.len());
        let read = |key: &str| -> Result<Vec<Option<f64>>> {
            let rows = v
                .get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Config(format!("map field `{key}` missing")))?;
            if rows.len() != nf {
                return Err(Error::Config(format!("map field `{key}`: expected {nf} rows")));
            }
            let mut out = Vec::with_capacity(nf * nv);
            for (i, row) in rows.iter().enumerate() {
                let row = row
                    .as_array()
                    .filter(|r| r.len() == nv)
                    .ok_or_else(|| Error::Config(format!("map field `{key}` row {i}: expected {nv} columns")))?;
                for x in row {
                    out.push(match x {
                        Value::String(s) if s == INFEASIBLE => None,
                        other => Some(other.as_f64().ok_or_else(|| {
                            Error::Config(format!("map field `{key}` row {i}: bad value {other}"))
                        })?),
                    });
                }
            }
            Ok(out)
        };
        let eta = read("eta")?;
        let cols = ["p_sw", "p_d", "p_cu", "p_hys", "p_eddy", "p_add", "p_mech", "p_sc"].map(read);
        let mut m = Vec::with_capacity(8);
        for c in cols {
            m.push(c?);
        }
        let cells = (0..nf * nv)
            .map(|k| match eta[k] {
                None => MapCell { eta: None, losses: None },
                Some(e) => {
                    let g = |c: usize| m[c][k].unwrap_or(0.0);
                    let (p_sw, p_d, p_cu, p_hys, p_eddy, p_add, p_mech, p_sc) =
                        (g(0), g(1), g(2), g(3), g(4), g(5), g(6), g(7));
                    let p_co = p_hys + p_eddy + p_add;
                    MapCell {
                        eta: Some(e),
                        losses: Some(LossBreakdown {
                            p_sw,
                            p_d,
                            p_cu,
                            p_co,
                            p_hys,
                            p_eddy,
                            p_add,
                            p_mech,
                            p_sc,
                            p_ee: p_sw + p_d + p_cu + p_co,
                            p_em: p_mech + p_sc,
                        }),
                    }
                }
            })
            .collect();
        Ok(EfficiencyMap { force_axis, velocity_axis, cells })
    }
}

/// Index of the lower bracketing node and the fractional position.
/// Relative overshoot past the last axis point still treated as on the edge,
/// so samples that sit on an actuator limit within solver tolerance resolve.
const EDGE_TOL: f64 = 1e-6;

fn bracket(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = axis.len();
    let slack = EDGE_TOL * (axis[n - 1] - axis[0]);
    if !(x >= axis[0] && x <= axis[n - 1] + slack) {
        return None;
    }
    let x = x.min(axis[n - 1]);
    let hi = axis.partition_point(|a| *a <= x).clamp(1, n - 1);
    let lo = hi - 1;
    Some((lo, (x - axis[lo]) / (axis[hi] - axis[lo])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn zero_power_edges() {
        let e = presets::lift_emla();
        let m = build_efficiency_map(&e, &linspace(0.0, 20e3, 5), &linspace(0.0, 0.08, 5)).unwrap();
        for j in 0..5 {
            assert_eq!(m.eta(0, j), Some(0.0));
        }
        for i in 0..5 {
            assert_eq!(m.eta(i, 0), Some(0.0));
        }
    }

    #[test]
    fn aggregation_and_range_hold_everywhere() {
        let e = presets::tilt_emla();
        let m = build_efficiency_map(&e, &e.map_forces, &e.map_velocities).unwrap();
        for c in &m.cells {
            if let (Some(eta), Some(l)) = (c.eta, c.losses) {
                assert!((0.0..=1.0).contains(&eta));
                assert_eq!(l.p_ee, l.p_sw + l.p_d + l.p_cu + l.p_co);
                assert_eq!(l.p_em, l.p_mech + l.p_sc);
            }
        }
    }

    #[test]
    fn over_limit_cells_are_marked() {
        let e = presets::lift_emla();
        let f_lim = e.drive.i_max * 1.5 * e.pmsm.p() * e.pmsm.pm_flux / e.equivalent().f_eq;
        let m = build_efficiency_map(&e, &[0.0, 0.5 * f_lim, 1.2 * f_lim], &[0.0, 0.01]).unwrap();
        assert!(m.eta(1, 1).is_some());
        assert!(m.eta(2, 1).is_none());
        assert!(m.to_csv().contains("infeasible"));
    }

    #[test]
    fn rejects_bad_axes() {
        let e = presets::lift_emla();
        assert!(build_efficiency_map(&e, &[0.0, 0.0], &[0.0, 1.0]).is_err());
        assert!(build_efficiency_map(&e, &[0.0], &[0.0, 1.0]).is_err());
        assert!(build_efficiency_map(&e, &[1.0, 0.5], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let e = presets::telescope_emla();
        let m = build_efficiency_map(&e, &e.map_forces, &e.map_velocities).unwrap();
        let back = EfficiencyMap::from_json(&m.to_json()).unwrap();
        assert_eq!(back.force_axis, m.force_axis);
        for (a, b) in back.cells.iter().zip(&m.cells) {
            assert_eq!(a.eta, b.eta);
        }
    }

    #[test]
    fn refinement_consistency() {
        let e = presets::lift_emla();
        let (fmax, vmax) = (*e.map_forces.last().unwrap(), *e.map_velocities.last().unwrap());
        let (nf, nv) = (e.map_forces.len(), e.map_velocities.len());
        let coarse = build_efficiency_map(&e, &e.map_forces, &e.map_velocities).unwrap();
        let fine =
            build_efficiency_map(&e, &linspace(0.0, fmax, 2 * nf - 1), &linspace(0.0, vmax, 2 * nv - 1)).unwrap();
        let mut worst: f64 = 0.0;
        for (i, f) in fine.force_axis.iter().enumerate() {
            for (j, v) in fine.velocity_axis.iter().enumerate() {
                // The first coarse interval holds the steep rise from the zero-power edges.
                if *f < e.map_forces[1] || *v < e.map_velocities[1] {
                    continue;
                }
                if let (Some(a), Some(b)) = (fine.eta(i, j), coarse.interpolate(*f, *v)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        assert!(worst <= 0.02, "max interpolation gap {worst}");
    }

    #[test]
    fn unimodal_along_rays() {
        let e = presets::lift_emla();
        let (fmax, vmax) = (*e.map_forces.last().unwrap(), *e.map_velocities.last().unwrap());
        for slope in [0.3, 0.6, 1.0] {
            let etas: Vec<f64> = (1..200)
                .map(|k| {
                    let s = k as f64 / 200.0;
                    map_cell(&e, s * fmax * slope, s * vmax).unwrap().eta.unwrap_or(0.0)
                })
                .collect();
            let peak = etas.iter().cloned().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
            assert!(etas[..=peak].windows(2).all(|w| w[1] >= w[0] - 1e-12));
            assert!(etas[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn bracket_edges() {
        let ax = [0.0, 1.0, 3.0];
        assert_eq!(bracket(&ax, 0.0), Some((0, 0.0)));
        assert_eq!(bracket(&ax, 3.0), Some((1, 1.0)));
        assert_eq!(bracket(&ax, 2.0), Some((1, 0.5)));
        assert_eq!(bracket(&ax, 3.1), None);
        assert_eq!(bracket(&ax, 3.0 + 1e-9), Some((1, 1.0)));
    }
}
