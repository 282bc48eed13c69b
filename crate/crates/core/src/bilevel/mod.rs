//! Outer level: searches criterion weights for the inner optimum with the
//! highest time-aggregated actuator efficiency.

mod search;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuator::{map_cell, EfficiencyMap, EmlaParams};
use crate::error::{Error, Result};
use crate::io::{csv_row, fmt_sig};
use crate::manipulator::ChainModel;
use crate::trajopt::{solve_inner, solve_inner_from, NlpProblem, TrajectoryResult};

pub use search::nelder_mead;

/// Per-sample aggregate efficiency of the motoring joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleEfficiency {
    pub eta: f64,
    /// Input-side power of the motoring joints, Σ pᵢ/ηᵢ.
    pub input_power: f64,
    /// Mechanical output power of the motoring joints.
    pub output_power: f64,
    /// No motoring power, or an operating point without a usable efficiency.
    pub flagged: bool,
}

/// η_Act = Σ pᵢ / Σ (pᵢ/ηᵢ) over joints with pᵢ = fᵢvᵢ > 0.
///
/// Regenerating joints are left out of both sums. A sample without motoring
/// power, or with a motoring joint whose efficiency is zero or unknown, gives 0
/// and is flagged.
pub fn total_efficiency(v_x: &[f64], f_x: &[f64], eta: impl Fn(usize, f64, f64) -> Option<f64>) -> SampleEfficiency {
    let mut out = 0.0;
    let mut input = 0.0;
    let mut bad = false;
    for (i, (v, f)) in v_x.iter().zip(f_x).enumerate() {
        let p = f * v;
        if p > 0.0 {
            out += p;
            match eta(i, *f, *v) {
                Some(e) if e > 0.0 => input += p / e,
                _ => bad = true,
            }
        }
    }
    if out <= 0.0 || bad {
        return SampleEfficiency { eta: 0.0, input_power: input, output_power: out, flagged: true };
    }
    SampleEfficiency { eta: out / input, input_power: input, output_power: out, flagged: false }
}

/// Where η comes from during the outer evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfficiencySource {
    /// Bilinear lookup in the per-joint map.
    #[default]
    Map,
    /// Steady-state loss model at each sample.
    Exact,
}

/// Per-joint actuators with their maps.
#[derive(Debug, Clone)]
pub struct ActuatorSet {
    pub params: Vec<EmlaParams>,
    pub maps: Vec<EfficiencyMap>,
}

impl ActuatorSet {
    /// Builds every map on the axes stored with the actuator.
    pub fn new(params: Vec<EmlaParams>) -> Result<Self> {
        let maps = params
            .iter()
            .map(|e| crate::actuator::build_efficiency_map(e, &e.map_forces, &e.map_velocities))
            .collect::<Result<Vec<_>>>()?;
        Ok(ActuatorSet { params, maps })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn eta(&self, source: EfficiencySource, joint: usize, f_x: f64, v_x: f64) -> Option<f64> {
        match source {
            EfficiencySource::Map => self.maps[joint].interpolate(f_x, v_x),
            EfficiencySource::Exact => {
                map_cell(&self.params[joint], f_x.abs(), v_x.abs()).ok().and_then(|c| c.eta)
            }
        }
    }
}

/// Efficiency statistics of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// ½ Δt Σ η_Act².
    pub outer_cost: f64,
    /// Power-weighted time mean of η_Act.
    pub total_efficiency: f64,
    /// Power-weighted mean η per joint over its motoring samples.
    pub joint_efficiency: Vec<f64>,
    /// Share of each joint's motoring samples inside the top quartile of its map.
    pub top_quartile_fraction: Vec<f64>,
    pub motoring_samples: Vec<usize>,
    pub flagged_samples: usize,
    pub samples: Vec<SampleEfficiency>,
}

/// Evaluates the outer objective and efficiency statistics of a trajectory.
pub fn evaluate_efficiency(
    traj: &TrajectoryResult,
    actuators: &ActuatorSet,
    source: EfficiencySource,
) -> Result<EfficiencyReport> {
    let na = traj.n_joints();
    if traj.t.is_empty() || na == 0 {
        return Err(Error::invalid("trajectory", "no samples"));
    }
    if actuators.len() != na {
        return Err(Error::invalid("actuators", format!("expected {na}, got {}", actuators.len())));
    }
    let samples: Vec<SampleEfficiency> = (0..traj.t.len())
        .into_par_iter()
        .map(|k| total_efficiency(&traj.v_x[k], &traj.f_x[k], |i, f, v| actuators.eta(source, i, f, v)))
        .collect();
    let outer_cost = 0.5 * traj.dt * samples.iter().map(|s| s.eta * s.eta).sum::<f64>();
    let (num, den) = samples.iter().fold((0.0, 0.0), |(a, b), s| (a + s.output_power * s.eta, b + s.output_power));
    let total = if den > 0.0 { num / den } else { 0.0 };
    let mut joint_efficiency = vec![0.0; na];
    let mut top = vec![0.0; na];
    let mut counts = vec![0; na];
    for i in 0..na {
        let thr = actuators.maps[i].top_quartile_threshold();
        let (mut num, mut den, mut inside) = (0.0, 0.0, 0usize);
        for k in 0..traj.t.len() {
            let (f, v) = (traj.f_x[k][i], traj.v_x[k][i]);
            let p = f * v;
            if p <= 0.0 {
                continue;
            }
            counts[i] += 1;
            let e = actuators.eta(source, i, f, v).unwrap_or(0.0);
            num += p * e;
            den += p;
            if actuators.maps[i].interpolate(f, v).is_some_and(|m| m >= thr) {
                inside += 1;
            }
        }
        joint_efficiency[i] = if den > 0.0 { num / den } else { 0.0 };
        top[i] = if counts[i] > 0 { inside as f64 / counts[i] as f64 } else { 0.0 };
    }
    Ok(EfficiencyReport {
        outer_cost,
        total_efficiency: total,
        joint_efficiency,
        top_quartile_fraction: top,
        motoring_samples: counts,
        flagged_samples: samples.iter().filter(|s| s.flagged).count(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OuterMethod {
    /// Exhaustive search on a uniform grid with `points` values per weight.
    Grid { points: usize },
    /// Nelder–Mead projected onto the weight box.
    NelderMead { max_evaluations: usize, initial_step: f64, tolerance: f64 },
}

impl Default for OuterMethod {
    fn default() -> Self {
        OuterMethod::NelderMead { max_evaluations: 40, initial_step: 0.25, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilevelConfig {
    pub omega_lower: Vec<f64>,
    pub omega_upper: Vec<f64>,
    #[serde(default)]
    pub method: OuterMethod,
    #[serde(default)]
    pub efficiency: EfficiencySource,
    /// Hand each outer iterate's inner solution to the next inner solve.
    #[serde(default)]
    pub warm_start: bool,
    /// Scale weights to sum to one before the inner solve.
    #[serde(default)]
    pub normalize_weights: bool,
    pub problem: NlpProblem,
}

impl BilevelConfig {
    pub fn validate(&self, n_joints: usize) -> Result<()> {
        let e = self.problem.weights.len();
        if self.omega_lower.len() != e || self.omega_upper.len() != e {
            return Err(Error::invalid("omega bounds", format!("expected {e} entries")));
        }
        for (l, u) in self.omega_lower.iter().zip(&self.omega_upper) {
            if !(l.is_finite() && u.is_finite() && 0.0 <= *l && l <= u) {
                return Err(Error::invalid("omega bounds", "need 0 <= lower <= upper"));
            }
        }
        match self.method {
            OuterMethod::Grid { points } if points < 1 => {
                return Err(Error::invalid("grid points", "must be at least 1"));
            }
            OuterMethod::NelderMead { max_evaluations, initial_step, tolerance } => {
                if max_evaluations < 1 || !(initial_step > 0.0) || !(tolerance >= 0.0) {
                    return Err(Error::invalid("nelder_mead", "needs positive budget and step"));
                }
            }
            _ => {}
        }
        let mut p = self.problem.clone();
        p.weights = self.omega_lower.clone();
        p.validate(n_joints)
    }

    fn degenerate(&self) -> bool {
        self.omega_lower.iter().zip(&self.omega_upper).all(|(l, u)| l == u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub omega: Vec<f64>,
    /// `None` when the inner solve failed or ended infeasible.
    pub cost: Option<f64>,
    pub best_so_far: Option<f64>,
}

/// One outer evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterEvaluation {
    pub omega: Vec<f64>,
    pub trajectory: TrajectoryResult,
    pub efficiency: EfficiencyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelResult {
    pub omega: Vec<f64>,
    pub outer_cost: f64,
    pub total_efficiency: f64,
    pub joint_efficiency: Vec<f64>,
    pub top_quartile_fraction: Vec<f64>,
    pub flagged_samples: usize,
    pub eta_act: Vec<f64>,
    pub trajectory: TrajectoryResult,
    pub trace: Vec<TracePoint>,
}

impl BilevelResult {
    /// Trace as CSV with columns index, w1..we, F, best_F, valid; a failed
    /// inner solve shows as `infeasible`.
    pub fn trace_csv(&self) -> String {
        let e = self.omega.len();
        let mut head = vec!["index".to_string()];
        head.extend((1..=e).map(|i| format!("w{i}")));
        head.extend(["F", "best_F", "valid"].map(String::from));
        let mut out = head.join(",");
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or_else(|| "infeasible".to_string(), fmt_sig);
        for (k, p) in self.trace.iter().enumerate() {
            let mut row = vec![k as f64];
            row.extend_from_slice(&p.omega);
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_row(&row),
                opt(p.cost),
                opt(p.best_so_far),
                u8::from(p.cost.is_some())
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("bilevel result serializes")
    }
}

fn inner_weights(cfg: &BilevelConfig, omega: &[f64]) -> Vec<f64> {
    let s: f64 = omega.iter().sum();
    if cfg.normalize_weights && s > 0.0 {
        omega.iter().map(|w| w / s).collect()
    } else {
        omega.to_vec()
    }
}

/// Solves the inner problem at `omega` and evaluates the outer objective.
pub fn outer_cost(
    model: &ChainModel,
    actuators: &ActuatorSet,
    cfg: &BilevelConfig,
    omega: &[f64],
    start: Option<&TrajectoryResult>,
) -> Result<OuterEvaluation> {
    let mut prob = cfg.problem.clone();
    prob.weights = inner_weights(cfg, omega);
    let trajectory = match start {
        Some(s) => solve_inner_from(model, &prob, s)?,
        None => solve_inner(model, &prob)?,
    };
    if trajectory.residuals.max() > 1e-6 {
        return Err(Error::Solver(format!("inner solve ended infeasible at omega {omega:?}")));
    }
    let efficiency = evaluate_efficiency(&trajectory, actuators, cfg.efficiency)?;
    Ok(OuterEvaluation { omega: omega.to_vec(), trajectory, efficiency })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Weight grid in lexicographic order, first weight slowest.
pub fn weight_grid(lower: &[f64], upper: &[f64], points: usize) -> Vec<Vec<f64>> {
    let mut grid = vec![vec![]];
    for (l, u) in lower.iter().zip(upper) {
        let axis = if l == u { vec![*l] } else { linspace(*l, *u, points) };
        grid = grid
            .into_iter()
            .flat_map(|w| {
                axis.iter().map(move |a| {
                    let mut w = w.clone();
                    w.push(*a);
                    w
                })
            })
            .collect();
    }
    grid
}

struct Tracker {
    trace: Vec<TracePoint>,
    best: Option<OuterEvaluation>,
}

impl Tracker {
    fn push(&mut self, omega: Vec<f64>, eval: Option<OuterEvaluation>) -> Option<f64> {
        let cost = eval.as_ref().map(|e| e.efficiency.outer_cost);
        if let Some(e) = eval {
            if self.best.as_ref().is_none_or(|b| e.efficiency.outer_cost > b.efficiency.outer_cost) {
                self.best = Some(e);
            }
        }
        let best_so_far = self.best.as_ref().map(|b| b.efficiency.outer_cost);
        self.trace.push(TracePoint { omega, cost, best_so_far });
        cost
    }
}

/// Maximizes the outer objective over the weight box.
pub fn solve_outer(model: &ChainModel, actuators: &ActuatorSet, cfg: &BilevelConfig) -> Result<BilevelResult> {
    cfg.validate(model.n_joints())?;
    let mut tr = Tracker { trace: vec![], best: None };
    if cfg.degenerate() {
        let ev = outer_cost(model, actuators, cfg, &cfg.omega_lower, None)?;
        tr.push(cfg.omega_lower.clone(), Some(ev));
    } else {
        match cfg.method {
            OuterMethod::Grid { points } => {
                let grid = weight_grid(&cfg.omega_lower, &cfg.omega_upper, points);
                let evals: Vec<Option<OuterEvaluation>> =
                    grid.par_iter().map(|w| outer_cost(model, actuators, cfg, w, None).ok()).collect();
                for (w, e) in grid.into_iter().zip(evals) {
                    tr.push(w, e);
                }
            }
            OuterMethod::NelderMead { max_evaluations, initial_step, tolerance } => {
                let mut last: Option<TrajectoryResult> = None;
                let start: Vec<f64> =
                    cfg.omega_lower.iter().zip(&cfg.omega_upper).map(|(l, u)| 0.5 * (l + u)).collect();
                let steps: Vec<f64> =
                    cfg.omega_lower.iter().zip(&cfg.omega_upper).map(|(l, u)| initial_step * (u - l)).collect();
                nelder_mead(
                    |w| {
                        let warm = if cfg.warm_start { last.as_ref() } else { None };
                        let ev = outer_cost(model, actuators, cfg, w, warm).ok();
                        if let Some(e) = &ev {
                            last = Some(e.trajectory.clone());
                        }
                        tr.push(w.to_vec(), ev).map(|c| -c)
                    },
                    &start,
                    &steps,
                    &cfg.omega_lower,
                    &cfg.omega_upper,
                    max_evaluations,
                    tolerance,
                );
            }
        }
    }
    let best = tr.best.ok_or_else(|| Error::Solver("no outer evaluation produced a feasible inner solution".into()))?;
    Ok(BilevelResult {
        omega: best.omega,
        outer_cost: best.efficiency.outer_cost,
        total_efficiency: best.efficiency.total_efficiency,
        joint_efficiency: best.efficiency.joint_efficiency,
        top_quartile_fraction: best.efficiency.top_quartile_fraction,
        flagged_samples: best.efficiency.flagged_samples,
        eta_act: best.efficiency.samples.iter().map(|s| s.eta).collect(),
        trajectory: best.trajectory,
        trace: tr.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuator::MapCell;
    use crate::presets::{default_manipulator, default_task, emlas};
    use crate::trajopt::{SplineSettings, Transcription};
    use proptest::prelude::*;

    fn constant_map(eta: f64) -> EfficiencyMap {
        let fa = vec![0.0, 1e6];
        let va = vec![0.0, 10.0];
        EfficiencyMap { force_axis: fa, velocity_axis: va, cells: vec![MapCell { eta: Some(eta), losses: None }; 4] }
    }

    fn small_config(method: OuterMethod) -> BilevelConfig {
        let mut problem = default_task();
        problem.spline = SplineSettings { degree: 5, n_ctrl: 8, m: 20 };
        BilevelConfig {
            omega_lower: vec![0.0, 0.0],
            omega_upper: vec![1.0, 1.0],
            method,
            efficiency: EfficiencySource::Map,
            warm_start: false,
            normalize_weights: false,
            problem,
        }
    }

    #[test]
    fn common_efficiency_passes_through() {
        let s = total_efficiency(&[0.1, 0.3, 0.2], &[100.0, 50.0, 7.0], |_, _, _| Some(0.37));
        assert!((s.eta - 0.37).abs() < 1e-15);
        assert!(!s.flagged);
    }

    #[test]
    fn single_active_joint() {
        let s = total_efficiency(&[0.1, 0.0, -0.2], &[100.0, 50.0, 7.0], |i, _, _| Some([0.8, 0.5, 0.2][i]));
        assert!((s.eta - 0.8).abs() < 1e-15);
    }

    #[test]
    fn equal_power_branches() {
        let s = total_efficiency(&[1.0, 2.0], &[10.0, 5.0], |i, _, _| Some([0.6, 0.3][i]));
        assert!((s.eta - 0.4).abs() < 1e-15);
    }

    #[test]
    fn degenerate_samples_are_flagged() {
        let s = total_efficiency(&[0.0, 0.0], &[1.0, 2.0], |_, _, _| Some(0.5));
        assert!(s.flagged && s.eta == 0.0);
        let s = total_efficiency(&[1.0, 1.0], &[1.0, 2.0], |i, _, _| if i == 0 { Some(0.0) } else { Some(0.5) });
        assert!(s.flagged && s.eta == 0.0);
        let s = total_efficiency(&[1.0, 1.0], &[1.0, 2.0], |_, _, _| None);
        assert!(s.flagged && s.eta == 0.0);
    }

    proptest! {
        #[test]
        fn aggregate_within_joint_bounds(
            v in prop::collection::vec(-1.0f64..1.0, 3),
            f in prop::collection::vec(-1e4f64..1e4, 3),
            e in prop::collection::vec(0.05f64..1.0, 3),
        ) {
            let s = total_efficiency(&v, &f, |i, _, _| Some(e[i]));
            let active: Vec<f64> = (0..3).filter(|&i| v[i] * f[i] > 0.0).map(|i| e[i]).collect();
            prop_assume!(!active.is_empty());
            let lo = active.iter().cloned().fold(f64::MAX, f64::min);
            let hi = active.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(s.eta >= lo - 1e-12 && s.eta <= hi + 1e-12);
        }
    }

    #[test]
    fn unit_efficiency_gives_half_horizon() {
        let model = default_manipulator();
        let mut prob = default_task();
        prob.spline = SplineSettings { degree: 5, n_ctrl: 8, m: 20 };
        prob.q_final = vec![0.2, 0.3, 0.5];
        prob.q_initial = vec![0.1, 0.2, 0.1];
        let tr = Transcription::new(&model, &prob).unwrap();
        let mut r = tr.result(&tr.initial_guess(), None).unwrap();
        // Every joint motoring at every sample.
        for k in 0..r.t.len() {
            r.v_x[k] = vec![0.1; 3];
            r.f_x[k] = vec![1.0; 3];
        }
        let acts = ActuatorSet { params: emlas(), maps: vec![constant_map(1.0); 3] };
        let e = evaluate_efficiency(&r, &acts, EfficiencySource::Map).unwrap();
        assert!((e.outer_cost - 0.5 * r.dt * 21.0).abs() < 1e-12);
        assert_eq!(e.total_efficiency, 1.0);
        let acts = ActuatorSet { params: emlas(), maps: vec![constant_map(0.5); 3] };
        let e = evaluate_efficiency(&r, &acts, EfficiencySource::Map).unwrap();
        assert!((e.total_efficiency - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_trajectory_rejected() {
        let model = default_manipulator();
        let mut prob = default_task();
        prob.spline = SplineSettings { degree: 5, n_ctrl: 8, m: 4 };
        let tr = Transcription::new(&model, &prob).unwrap();
        let mut r = tr.result(&tr.initial_guess(), None).unwrap();
        r.t.clear();
        let acts = ActuatorSet { params: emlas(), maps: vec![constant_map(1.0); 3] };
        assert!(evaluate_efficiency(&r, &acts, EfficiencySource::Map).is_err());
    }

    #[test]
    fn weight_grid_order() {
        let g = weight_grid(&[0.0, 1.0], &[1.0, 1.0], 3);
        assert_eq!(g, vec![vec![0.0, 1.0], vec![0.5, 1.0], vec![1.0, 1.0]]);
        assert_eq!(weight_grid(&[0.0, 0.0], &[1.0, 1.0], 5).len(), 25);
    }

    #[test]
    fn degenerate_box_single_point() {
        let model = default_manipulator();
        let acts = ActuatorSet::new(emlas()).unwrap();
        let mut cfg = small_config(OuterMethod::Grid { points: 5 });
        cfg.omega_lower = vec![0.3, 0.7];
        cfg.omega_upper = vec![0.3, 0.7];
        let r = solve_outer(&model, &acts, &cfg).unwrap();
        assert_eq!(r.omega, vec![0.3, 0.7]);
        assert_eq!(r.trace.len(), 1);
        let direct = outer_cost(&model, &acts, &cfg, &[0.3, 0.7], None).unwrap();
        assert_eq!(direct.efficiency.outer_cost, r.outer_cost);
    }

    #[test]
    fn grid_search_returns_grid_maximum() {
        let model = default_manipulator();
        let acts = ActuatorSet::new(emlas()).unwrap();
        let cfg = small_config(OuterMethod::Grid { points: 3 });
        let r = solve_outer(&model, &acts, &cfg).unwrap();
        let best = r.trace.iter().filter_map(|p| p.cost).fold(f64::MIN, f64::max);
        assert_eq!(r.outer_cost, best);
        for w in r.trace.windows(2) {
            assert!(w[1].best_so_far >= w[0].best_so_far);
        }
        // Re-solving at ω* and at 2ω* reproduces the objective.
        let again = outer_cost(&model, &acts, &cfg, &r.omega, None).unwrap();
        assert!((again.efficiency.outer_cost - r.outer_cost).abs() <= 1e-8);
        let doubled: Vec<f64> = r.omega.iter().map(|w| 2.0 * w).collect();
        let mut wide = cfg.clone();
        wide.omega_upper = vec![2.0, 2.0];
        let twice = outer_cost(&model, &acts, &wide, &doubled, None).unwrap();
        assert!((twice.efficiency.outer_cost - r.outer_cost).abs() <= 1e-6 * r.outer_cost);
    }

    #[test]
    fn nelder_mead_trace_is_monotone() {
        let model = default_manipulator();
        let acts = ActuatorSet::new(emlas()).unwrap();
        let cfg = small_config(OuterMethod::NelderMead { max_evaluations: 8, initial_step: 0.25, tolerance: 1e-6 });
        let r = solve_outer(&model, &acts, &cfg).unwrap();
        assert!(r.trace.len() <= 8);
        for w in r.trace.windows(2) {
            assert!(w[1].best_so_far >= w[0].best_so_far);
        }
        assert!(r.trace.iter().filter_map(|p| p.cost).all(|c| c <= r.outer_cost));
        let csv = r.trace_csv();
        assert!(csv.starts_with("index,w1,w2,F,best_F,valid\n"));
        assert_eq!(csv.lines().count(), r.trace.len() + 1);
    }

    #[test]
    fn invalid_bounds_rejected() {
        let mut cfg = small_config(OuterMethod::Grid { points: 3 });
        cfg.omega_lower = vec![0.5, 0.0];
        cfg.omega_upper = vec![0.2, 1.0];
        assert!(cfg.validate(3).is_err());
        let mut cfg = small_config(OuterMethod::Grid { points: 3 });
        cfg.omega_lower = vec![-0.1, 0.0];
        assert!(cfg.validate(3).is_err());
    }
}
