use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{adaptive_update, control_law, tracking_transform, ActuatorGains, ControllerConfig, DisturbanceProfile, SUBSYSTEMS};
use crate::actuator::{equivalent_params, q_current_for_torque, state_derivative, EmlaParams, EquivalentParams};
use crate::error::{Error, Result};
use crate::io::csv_row;
use crate::manipulator::{rnea, ChainModel};
use crate::spline::eval_trajectory;
use crate::trajopt::TrajectoryResult;

/// What the actuators push against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    /// The manipulator: load forces follow its inverse dynamics at the actual
    /// strokes, coupling the actuators through the mass matrix.
    #[default]
    Manipulator,
    /// Each actuator sees the reference force of its joint; actuators are independent.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// Requested integration step; reduced so that reference samples fall on steps.
    pub dt: f64,
    /// Record every n-th step in addition to the reference sample instants.
    pub record_every: usize,
    pub load: LoadModel,
    /// Simulated time; defaults to the reference horizon.
    pub duration: Option<f64>,
    /// Initial plant offsets from the reference per joint: stroke (m),
    /// velocity (m/s), i_q and i_d (A).
    pub initial_offset: Vec<[f64; 4]>,
    /// Start of the error statistics window (s).
    pub transient: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            dt: 1e-4,
            record_every: 10,
            load: LoadModel::Manipulator,
            duration: None,
            initial_offset: vec![],
            transient: 0.2,
        }
    }
}

/// Recorded closed-loop signals; rows are time, inner vectors are joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingTrace {
    pub dt: f64,
    pub t: Vec<f64>,
    pub f_x: Vec<Vec<f64>>,
    pub f_x_ref: Vec<Vec<f64>>,
    pub v_x: Vec<Vec<f64>>,
    pub v_x_ref: Vec<Vec<f64>>,
    pub stroke: Vec<Vec<f64>>,
    pub stroke_ref: Vec<Vec<f64>>,
    pub i_q: Vec<Vec<f64>>,
    pub i_d: Vec<Vec<f64>>,
    pub v_q: Vec<Vec<f64>>,
    pub v_d: Vec<Vec<f64>>,
    /// Normalized tracking errors Q̄₁..Q̄₄.
    pub q: Vec<Vec<[f64; SUBSYSTEMS]>>,
    pub phi: Vec<Vec<[f64; SUBSYSTEMS]>>,
    pub v_lyap: Vec<f64>,
    /// Rows that coincide with reference samples, with the sample index.
    pub sample_rows: Vec<(usize, usize)>,
    /// Largest magnitude of the additive load disturbance.
    pub disturbance_bound: f64,
    pub transient: f64,
}

impl TrackingTrace {
    pub fn n_joints(&self) -> usize {
        self.f_x.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let n = self.n_joints();
        let mut head = vec!["t".to_string()];
        for i in 1..=n {
            for c in ["f_x", "f_x_ref", "v_x", "v_x_ref", "iq", "id", "Vq", "Vd"] {
                head.push(format!("{c}{i}"));
            }
            head.extend((1..=SUBSYSTEMS).map(|nu| format!("Q{nu}_{i}")));
            head.extend((1..=SUBSYSTEMS).map(|nu| format!("phi{nu}_{i}")));
        }
        head.push("V_lyap".into());
        let mut out = head.join(",");
        out.push('\n');
        let mut row = Vec::with_capacity(head.len());
        for k in 0..self.t.len() {
            row.clear();
            row.push(self.t[k]);
            for i in 0..n {
                row.extend([
                    self.f_x[k][i],
                    self.f_x_ref[k][i],
                    self.v_x[k][i],
                    self.v_x_ref[k][i],
                    self.i_q[k][i],
                    self.i_d[k][i],
                    self.v_q[k][i],
                    self.v_d[k][i],
                ]);
                row.extend_from_slice(&self.q[k][i]);
                row.extend_from_slice(&self.phi[k][i]);
            }
            row.push(self.v_lyap[k]);
            out.push_str(&csv_row(&row));
            out.push('\n');
        }
        out
    }
}

/// RMS tracking errors after the transient, absolute and relative to the
/// reference peak of each joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrors {
    pub force_rms: Vec<f64>,
    pub velocity_rms: Vec<f64>,
    pub force_peak: Vec<f64>,
    pub velocity_peak: Vec<f64>,
    pub force_relative: Vec<f64>,
    pub velocity_relative: Vec<f64>,
}

pub fn tracking_errors(trace: &TrackingTrace) -> Result<TrackingErrors> {
    let n = trace.n_joints();
    let rows: Vec<usize> = (0..trace.t.len()).filter(|&k| trace.t[k] >= trace.transient).collect();
    if rows.is_empty() || n == 0 {
        return Err(Error::invalid("trace", "no samples after the transient"));
    }
    let rms = |a: &[Vec<f64>], b: &[Vec<f64>], i: usize| {
        (rows.iter().map(|&k| (a[k][i] - b[k][i]).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
    };
    let peak = |a: &[Vec<f64>], i: usize| a.iter().map(|r| r[i].abs()).fold(0.0, f64::max);
    let mut e = TrackingErrors {
        force_rms: vec![],
        velocity_rms: vec![],
        force_peak: vec![],
        velocity_peak: vec![],
        force_relative: vec![],
        velocity_relative: vec![],
    };
    for i in 0..n {
        let (fr, vr) = (rms(&trace.f_x, &trace.f_x_ref, i), rms(&trace.v_x, &trace.v_x_ref, i));
        let (fp, vp) = (peak(&trace.f_x_ref, i), peak(&trace.v_x_ref, i));
        e.force_rms.push(fr);
        e.velocity_rms.push(vr);
        e.force_peak.push(fp);
        e.velocity_peak.push(vp);
        e.force_relative.push(if fp > 0.0 { fr / fp } else { fr });
        e.velocity_relative.push(if vp > 0.0 { vr / vp } else { vr });
    }
    Ok(e)
}

/// Plant parameters with the configured spread applied.
fn perturbed(params: &[EmlaParams], d: &DisturbanceProfile) -> Vec<EmlaParams> {
    params
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let mut p = p.clone();
            if d.parameter_spread > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
                rng.set_stream(4 * j as u64);
                let mut scale = |v: &mut f64| *v *= 1.0 + d.parameter_spread * rng.random_range(-1.0..=1.0);
                scale(&mut p.pmsm.stator_resistance);
                scale(&mut p.pmsm.inductance_d);
                scale(&mut p.pmsm.inductance_q);
                scale(&mut p.pmsm.pm_flux);
                scale(&mut p.drivetrain.motor_inertia);
                scale(&mut p.drivetrain.load_mass);
                scale(&mut p.drivetrain.viscous_motor);
                scale(&mut p.drivetrain.screw_viscous);
            }
            p
        })
        .collect()
}

struct Plant<'a> {
    model: &'a ChainModel,
    params: Vec<EmlaParams>,
    eq: Vec<EquivalentParams>,
    x0: Vec<f64>,
    load: LoadModel,
}

type State = Vec<[f64; 4]>;

impl Plant<'_> {
    fn stroke(&self, s: &State) -> (Vec<f64>, Vec<f64>) {
        let q = s.iter().enumerate().map(|(i, x)| self.x0[i] + self.eq[i].f_eq * x[0]).collect();
        let v = s.iter().enumerate().map(|(i, x)| self.eq[i].f_eq * x[1]).collect();
        (q, v)
    }

    /// State derivative and actuator load forces.
    fn derivative(&self, s: &State, u: &[(f64, f64)], dist: &[f64], f_ref: &[f64]) -> Result<(State, Vec<f64>)> {
        let n = s.len();
        match self.load {
            LoadModel::Reference => {
                let mut ds = Vec::with_capacity(n);
                let mut force = Vec::with_capacity(n);
                for i in 0..n {
                    let f = f_ref[i] + dist[i];
                    ds.push(state_derivative(&self.params[i].pmsm, &self.eq[i], &s[i], u[i], f));
                    force.push(f);
                }
                Ok((ds, force))
            }
            LoadModel::Manipulator => {
                let (q, v) = self.stroke(s);
                let zero = vec![0.0; n];
                let h = rnea(self.model, &q, &v, &zero)?.f_x;
                let mut m = DMatrix::zeros(n, n);
                for l in 0..n {
                    let mut e = zero.clone();
                    e[l] = 1.0;
                    let col = rnea(self.model, &q, &v, &e)?.f_x;
                    for i in 0..n {
                        m[(i, l)] = col[i] - h[i];
                    }
                }
                let mut lhs = m.clone();
                let mut rhs = DVector::zeros(n);
                for i in 0..n {
                    let (p, eq) = (&self.params[i].pmsm, &self.eq[i]);
                    let x = &s[i];
                    let tau = crate::actuator::electromagnetic_torque(p, x[3], x[2]);
                    lhs[(i, i)] += eq.j_eq / (eq.f_eq * eq.f_eq);
                    rhs[i] = (tau - eq.b_eq * x[1] - eq.k_eq * x[0]) / eq.f_eq - h[i] - dist[i];
                }
                let a = lhs
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Domain("singular coupled mass matrix".into()))?;
                let ma = &m * &a;
                let mut ds = Vec::with_capacity(n);
                let mut force = Vec::with_capacity(n);
                for i in 0..n {
                    let mut d = state_derivative(&self.params[i].pmsm, &self.eq[i], &s[i], u[i], 0.0);
                    d[1] = a[i] / self.eq[i].f_eq;
                    ds.push(d);
                    force.push(h[i] + ma[i] + dist[i]);
                }
                Ok((ds, force))
            }
        }
    }
}

fn axpy(s: &State, k: &State, h: f64) -> State {
    s.iter()
        .zip(k)
        .map(|(a, b)| {
            let mut o = *a;
            for c in 0..4 {
                o[c] += h * b[c];
            }
            o
        })
        .collect()
}

/// Closed-loop simulation of the decomposed controller on the actuators.
///
/// Controls and disturbances are held over each integration step; the plant
/// is advanced with classical Runge–Kutta. At reference sample instants the
/// recorded references are the stored samples themselves.
pub fn simulate_tracking(
    model: &ChainModel,
    actuators: &[EmlaParams],
    reference: &TrajectoryResult,
    controller: &ControllerConfig,
    disturbance: &DisturbanceProfile,
    cfg: &TrackingConfig,
) -> Result<TrackingTrace> {
    let n = reference.n_joints();
    if n == 0 || reference.t.len() < 2 {
        return Err(Error::invalid("reference", "needs at least two samples"));
    }
    if actuators.len() != n || model.n_joints() != n {
        return Err(Error::invalid("actuators", format!("expected {n} actuators")));
    }
    for a in actuators {
        a.validate()?;
    }
    controller.validate(n)?;
    disturbance.validate(n)?;
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) || cfg.record_every == 0 {
        return Err(Error::invalid("tracking", "dt must be positive and record_every at least 1"));
    }
    if !cfg.initial_offset.is_empty() && cfg.initial_offset.len() != n {
        return Err(Error::invalid("initial_offset", format!("expected {n} entries")));
    }
    let duration = cfg.duration.unwrap_or(reference.t_m);
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::invalid("duration", "must be positive"));
    }

    let spline = reference.spline()?;
    let m = reference.t.len() - 1;
    let ratio = (reference.dt / cfg.dt).ceil().max(1.0) as usize;
    let h = reference.dt / ratio as f64;
    let steps = (duration / h).round() as usize;

    let params = perturbed(actuators, disturbance);
    let plant = Plant {
        model,
        eq: params.iter().map(|a| equivalent_params(&a.drivetrain)).collect(),
        params,
        x0: reference.q[0].clone(),
        load: cfg.load,
    };

    let offset = |i: usize| cfg.initial_offset.get(i).copied().unwrap_or([0.0; 4]);
    let mut state: State = (0..n)
        .map(|i| {
            let o = offset(i);
            let f = plant.eq[i].f_eq;
            [o[0] / f, (reference.qd[0][i] + o[1]) / f, o[2], o[3]]
        })
        .collect();
    let mut phi = vec![[0.0; SUBSYSTEMS]; n];

    let f_peak: Vec<f64> = (0..n).map(|i| reference.f_x.iter().map(|r| r[i].abs()).fold(0.0, f64::max)).collect();
    let sigma: Vec<f64> = f_peak.iter().map(|p| disturbance.load_noise * p).collect();
    let a_noise = (-2.0 * std::f64::consts::PI * disturbance.load_noise_bandwidth * h).exp();
    let mut noise_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|j| {
            let mut r = ChaCha8Rng::seed_from_u64(disturbance.seed);
            r.set_stream(4 * j as u64 + 1);
            r
        })
        .collect();
    let mut sensor_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|j| {
            let mut r = ChaCha8Rng::seed_from_u64(disturbance.seed);
            r.set_stream(4 * j as u64 + 2);
            r
        })
        .collect();
    let mut noise: Vec<f64> = (0..n)
        .map(|i| if sigma[i] > 0.0 { sigma[i] * noise_rng[i].sample::<f64, _>(StandardNormal) } else { 0.0 })
        .collect();

    let mut tr = TrackingTrace {
        dt: h,
        t: vec![],
        f_x: vec![],
        f_x_ref: vec![],
        v_x: vec![],
        v_x_ref: vec![],
        stroke: vec![],
        stroke_ref: vec![],
        i_q: vec![],
        i_d: vec![],
        v_q: vec![],
        v_d: vec![],
        q: vec![],
        phi: vec![],
        v_lyap: vec![],
        sample_rows: vec![],
        disturbance_bound: 0.0,
        transient: cfg.transient,
    };

    let gains: &[ActuatorGains] = &controller.joints;
    for s in 0..=steps {
        let sample = (s % ratio == 0 && s / ratio <= m).then_some(s / ratio);
        let t = match sample {
            Some(k) => reference.t[k],
            None => s as f64 * h,
        };
        let record = s % cfg.record_every == 0 || sample.is_some();
        let (q_ref, v_ref, f_ref): (Vec<f64>, Vec<f64>, Option<Vec<f64>>) = match sample {
            Some(k) => (reference.q[k].clone(), reference.qd[k].clone(), Some(reference.f_x[k].clone())),
            None => {
                let (q, qd, qdd) = eval_trajectory(&spline, t.min(reference.t_m))?;
                let qd = if t > reference.t_m { vec![0.0; n] } else { qd };
                let qdd = if t > reference.t_m { vec![0.0; n] } else { qdd };
                let need = record || cfg.load == LoadModel::Reference;
                let f = if need { Some(rnea(model, &q, &qd, &qdd)?.f_x) } else { None };
                (q, qd, f)
            }
        };
        let f_ref_now = f_ref.clone().unwrap_or_else(|| vec![0.0; n]);

        let (stroke, vel) = plant.stroke(&state);
        let sn = disturbance.sensor_noise;
        let mut meas = vec![[0.0; 4]; n];
        for i in 0..n {
            let mut z = [stroke[i], vel[i], state[i][2], state[i][3]];
            for (c, std) in [sn[0], sn[1], sn[2], sn[2]].iter().enumerate() {
                if *std > 0.0 {
                    z[c] += std * sensor_rng[i].sample::<f64, _>(StandardNormal);
                }
            }
            meas[i] = z;
        }

        // Controller, one actuator at a time.
        let mut u = vec![(0.0, 0.0); n];
        let mut qbar = vec![[0.0; SUBSYSTEMS]; n];
        for i in 0..n {
            let g = &gains[i];
            let z = meas[i];
            let q1 = tracking_transform(1, z[0], q_ref[i], 0.0);
            qbar[i][0] = q1 / g[0].state_scale;
            let k1 = g[0].output_scale * control_law(&g[0], phi[i][0], qbar[i][0]);
            let q2 = tracking_transform(2, z[1], v_ref[i], k1);
            qbar[i][1] = q2 / g[1].state_scale;
            let k2 = g[1].output_scale * control_law(&g[1], phi[i][1], qbar[i][1]);
            let iq_ref = q_current_for_torque(&actuators[i].pmsm, k2, 0.0);
            let q3 = tracking_transform(3, z[2], iq_ref, 0.0);
            qbar[i][2] = q3 / g[2].state_scale;
            let k3 = g[2].output_scale * control_law(&g[2], phi[i][2], qbar[i][2]);
            let q4 = tracking_transform(4, z[3], 0.0, 0.0);
            qbar[i][3] = q4 / g[3].state_scale;
            let k4 = g[3].output_scale * control_law(&g[3], phi[i][3], qbar[i][3]);
            u[i] = (k3, k4);
        }

        let dist: Vec<f64> = (0..n)
            .map(|i| {
                let step = if !disturbance.step_force.is_empty() && t >= disturbance.step_time {
                    disturbance.step_force[i]
                } else {
                    0.0
                };
                noise[i] + step
            })
            .collect();
        for d in &dist {
            tr.disturbance_bound = tr.disturbance_bound.max(d.abs());
        }

        let (k1, force) = plant.derivative(&state, &u, &dist, &f_ref_now)?;
        if record {
            let mut v = 0.0;
            for i in 0..n {
                for nu in 0..SUBSYSTEMS {
                    let ph = phi[i][nu] - controller.phi_star;
                    v += 0.5 * (qbar[i][nu] * qbar[i][nu] + ph * ph / gains[i][nu].k);
                }
            }
            if let Some(k) = sample {
                tr.sample_rows.push((tr.t.len(), k));
            }
            tr.t.push(t);
            tr.f_x.push(force);
            tr.f_x_ref.push(f_ref.unwrap_or_else(|| vec![0.0; n]));
            tr.v_x.push(vel.clone());
            tr.v_x_ref.push(v_ref.clone());
            tr.stroke.push(stroke.clone());
            tr.stroke_ref.push(q_ref.clone());
            tr.i_q.push(state.iter().map(|x| x[2]).collect());
            tr.i_d.push(state.iter().map(|x| x[3]).collect());
            tr.v_q.push(u.iter().map(|x| x.0).collect());
            tr.v_d.push(u.iter().map(|x| x.1).collect());
            tr.q.push(qbar.clone());
            tr.phi.push(phi.clone());
            tr.v_lyap.push(v);
        }
        if s == steps {
            break;
        }

        for i in 0..n {
            for nu in 0..SUBSYSTEMS {
                phi[i][nu] = adaptive_update(&gains[i][nu], phi[i][nu], qbar[i][nu], h)?;
            }
        }
        let k2 = plant.derivative(&axpy(&state, &k1, 0.5 * h), &u, &dist, &f_ref_now)?.0;
        let k3 = plant.derivative(&axpy(&state, &k2, 0.5 * h), &u, &dist, &f_ref_now)?.0;
        let k4 = plant.derivative(&axpy(&state, &k3, h), &u, &dist, &f_ref_now)?.0;
        for i in 0..n {
            for c in 0..4 {
                state[i][c] += h / 6.0 * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
            }
        }
        if state.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("plant state diverged at step {s} (t = {t})")));
        }
        for i in 0..n {
            if sigma[i] > 0.0 {
                let w: f64 = noise_rng[i].sample(StandardNormal);
                noise[i] = a_noise * noise[i] + sigma[i] * (1.0 - a_noise * a_noise).sqrt() * w;
            }
        }
    }
    Ok(tr)
}
