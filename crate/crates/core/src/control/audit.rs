use serde::{Deserialize, Serialize};

use super::{ControllerConfig, TrackingTrace, SUBSYSTEMS};
use crate::error::{Error, Result};

/// V = ½ ΣᵢΣ_ν (Q̄² + (φ̂ − φ*)²/k) for one recorded row.
pub fn lyapunov_value(cfg: &ControllerConfig, q: &[[f64; SUBSYSTEMS]], phi: &[[f64; SUBSYSTEMS]]) -> f64 {
    let mut v = 0.0;
    for (i, g) in cfg.joints.iter().enumerate() {
        for nu in 0..SUBSYSTEMS {
            let e = phi[i][nu] - cfg.phi_star;
            v += 0.5 * (q[i][nu] * q[i][nu] + e * e / g[nu].k);
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityAudit {
    /// min over δ and kσ.
    pub zeta: f64,
    pub v: Vec<f64>,
    /// Decay rate fitted to log V while V stays above the floor.
    pub zeta_fit: f64,
    /// Whether V decreases at every recorded row until it reaches the floor.
    pub strictly_decreasing: bool,
    /// Rows with V(t+Δ) > V(t)(1 − ζΔ) + b·Δ for the recorded disturbance bound b.
    pub descent_violations: usize,
    pub max_descent_excess: f64,
    pub disturbance_bound: f64,
    pub floor: f64,
}

/// Recomputes V from the trace and checks its decay.
///
/// `floor` is relative to V(0); rows below it are ignored by the fit and the
/// monotonicity check.
pub fn lyapunov_audit(trace: &TrackingTrace, cfg: &ControllerConfig, floor: f64) -> Result<StabilityAudit> {
    cfg.validate(trace.n_joints())?;
    if trace.t.len() < 2 {
        return Err(Error::invalid("trace", "needs at least two rows"));
    }
    let v: Vec<f64> = (0..trace.t.len()).map(|k| lyapunov_value(cfg, &trace.q[k], &trace.phi[k])).collect();
    let zeta = cfg.zeta();
    let v_floor = floor * v[0];
    let mut strictly = true;
    let mut violations = 0;
    let mut excess = f64::NEG_INFINITY;
    let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..v.len() {
        if v[k] > v_floor && v[k] > 0.0 {
            let (x, y) = (trace.t[k], v[k].ln());
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            cnt += 1.0;
        }
        if k + 1 < v.len() {
            let dt = trace.t[k + 1] - trace.t[k];
            if v[k] > v_floor && v[k + 1] >= v[k] {
                strictly = false;
            }
            let gap = v[k + 1] - (v[k] * (1.0 - zeta * dt) + trace.disturbance_bound * dt);
            excess = excess.max(gap);
            if gap > 0.0 {
                violations += 1;
            }
        }
    }
    let zeta_fit = if cnt >= 2.0 {
        let den = cnt * sxx - sx * sx;
        if den > 0.0 { -(cnt * sxy - sx * sy) / den } else { 0.0 }
    } else {
        0.0
    };
    Ok(StabilityAudit {
        zeta,
        v,
        zeta_fit,
        strictly_decreasing: strictly,
        descent_violations: violations,
        max_descent_excess: excess,
        disturbance_bound: trace.disturbance_bound,
        floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::SubsystemGains;

    #[test]
    fn value_by_hand() {
        let cfg = ControllerConfig { joints: vec![[SubsystemGains::standard(); SUBSYSTEMS]], phi_star: 0.5 };
        let v = lyapunov_value(&cfg, &[[1.0, -2.0, 0.0, 0.5]], &[[0.5, 1.9, 0.5, 0.5]]);
        assert!((v - (0.5 * (1.0 + 4.0 + 0.25) + 0.5 * 1.96 / 7.0)).abs() < 1e-14);
        assert_eq!(cfg.zeta(), 63.0);
    }
}
