//! Loop-closure geometry of one piston-driven closed chain.
//!
//! The triangle has vertices P (boom pivot), A (cylinder base) and B (rod
//! attachment on the boom) with |PA| = L_j, |PB| = L_j1 and |AB| = x_j + x_j0.
//! All three interior angles are returned with a negative sign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedChainGeometry {
    /// |PA| in m.
    pub l_j: f64,
    /// |PB| in m.
    pub l_j1: f64,
    /// Retracted cylinder body length L_jc.
    pub l_jc: f64,
    /// Remaining zero-stroke length L_jc0.
    pub l_jc0: f64,
    /// Distance from the rod frame origin to the rod eye at B.
    pub l_cj: f64,
    pub stroke_min: f64,
    pub stroke_max: f64,
}

/// Interior angles (q_j at P, q_j1 at A, q_j2 at B), all in (−π, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureAngles {
    pub q_j: f64,
    pub q_j1: f64,
    pub q_j2: f64,
}

/// Value and first two time derivatives of one angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AngleMotion {
    pub value: f64,
    pub rate: f64,
    pub accel: f64,
}

impl ClosedChainGeometry {
    /// Effective cylinder length at zero stroke.
    pub fn x_j0(&self) -> f64 {
        self.l_jc + self.l_jc0
    }

    pub fn validate(&self, chain: usize) -> Result<()> {
        for (what, v) in [("l_j", self.l_j), ("l_j1", self.l_j1), ("l_cj", self.l_cj)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("chain {chain} {what}"), "must be positive"));
            }
        }
        if !(self.x_j0() > 0.0) {
            return Err(Error::invalid(format!("chain {chain} x_j0"), "must be positive"));
        }
        if !(self.stroke_min < self.stroke_max) {
            return Err(Error::invalid(format!("chain {chain} stroke"), "min must be below max"));
        }
        self.check_triangle(chain, self.stroke_min)?;
        self.check_triangle(chain, self.stroke_max)?;
        if self.x_j0() + self.stroke_min <= self.l_cj {
            return Err(Error::invalid(
                format!("chain {chain} l_cj"),
                "rod eye offset exceeds the retracted cylinder length",
            ));
        }
        Ok(())
    }

    fn check_triangle(&self, chain: usize, x: f64) -> Result<f64> {
        let s = x + self.x_j0();
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("chain {chain} stroke")));
        }
        if s <= (self.l_j - self.l_j1).abs() {
            return Err(Error::InfeasibleStroke {
                chain,
                stroke: x,
                inequality: "x_j + x_j0 > |L_j - L_j1|".into(),
            });
        }
        if s >= self.l_j + self.l_j1 {
            return Err(Error::InfeasibleStroke {
                chain,
                stroke: x,
                inequality: "x_j + x_j0 < L_j + L_j1".into(),
            });
        }
        Ok(s)
    }

    /// Cosines of the three angles and their first two derivatives in s.
    fn cosines(&self, s: f64) -> [(f64, f64, f64); 3] {
        let (l, l1) = (self.l_j, self.l_j1);
        let c0 = (l * l + l1 * l1 - s * s) / (2.0 * l * l1);
        let d0 = -s / (l * l1);
        let e0 = -1.0 / (l * l1);
        let k1 = (l * l - l1 * l1) / (2.0 * l);
        let c1 = s / (2.0 * l) + k1 / s;
        let d1 = 1.0 / (2.0 * l) - k1 / (s * s);
        let e1 = 2.0 * k1 / (s * s * s);
        let k2 = (l1 * l1 - l * l) / (2.0 * l1);
        let c2 = s / (2.0 * l1) + k2 / s;
        let d2 = 1.0 / (2.0 * l1) - k2 / (s * s);
        let e2 = 2.0 * k2 / (s * s * s);
        [(c0, d0, e0), (c1, d1, e1), (c2, d2, e2)]
    }
}

/// Interior angles for stroke `x_j`.
pub fn loop_closure(geom: &ClosedChainGeometry, chain: usize, x_j: f64) -> Result<ClosureAngles> {
    let s = geom.check_triangle(chain, x_j)?;
    let [a, b, c] = geom.cosines(s).map(|(c, _, _)| -c.clamp(-1.0, 1.0).acos());
    Ok(ClosureAngles { q_j: a, q_j1: b, q_j2: c })
}

/// Angles with rates and accelerations for stroke motion (x, ẋ, ẍ).
pub fn loop_closure_motion(
    geom: &ClosedChainGeometry,
    chain: usize,
    x: f64,
    xd: f64,
    xdd: f64,
) -> Result<[AngleMotion; 3]> {
    let s = geom.check_triangle(chain, x)?;
    Ok(geom.cosines(s).map(|(c, dc, ddc)| {
        let w = 1.0 - c * c;
        let r = w.sqrt();
        // q = −acos(c(s))
        let q_s = dc / r;
        let q_ss = ddc / r + c * dc * dc / (w * r);
        AngleMotion {
            value: -c.clamp(-1.0, 1.0).acos(),
            rate: q_s * xd,
            accel: q_ss * xd * xd + q_s * xdd,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn geom() -> ClosedChainGeometry {
        ClosedChainGeometry {
            l_j: 1.0,
            l_j1: 0.9,
            l_jc: 0.7,
            l_jc0: 0.45,
            l_cj: 0.6,
            stroke_min: 0.0,
            stroke_max: 0.5,
        }
    }

    #[test]
    fn right_angle_at_pivot() {
        let g = geom();
        let x = (g.l_j.powi(2) + g.l_j1.powi(2)).sqrt() - g.x_j0();
        let a = loop_closure(&g, 0, x).unwrap();
        assert!((a.q_j + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn angle_sum_is_pi() {
        let g = geom();
        for k in 0..=1000 {
            let x = g.stroke_min + (g.stroke_max - g.stroke_min) * k as f64 / 1000.0;
            let a = loop_closure(&g, 0, x).unwrap();
            assert!((a.q_j.abs() + a.q_j1.abs() + a.q_j2.abs() - PI).abs() < 1e-10);
            assert!(a.q_j < 0.0 && a.q_j1 < 0.0 && a.q_j2 < 0.0);
        }
    }

    #[test]
    fn matches_circle_intersection() {
        let g = geom();
        let x = 0.5 * (g.stroke_min + g.stroke_max);
        let s = x + g.x_j0();
        // P at the origin, A on the x axis; B below the axis.
        let (p, a) = ((0.0f64, 0.0f64), (g.l_j, 0.0f64));
        let bx = (g.l_j1 * g.l_j1 - s * s + g.l_j * g.l_j) / (2.0 * g.l_j);
        let by = -(g.l_j1 * g.l_j1 - bx * bx).sqrt();
        let ang = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| {
            let (ux, uy) = (u.0 - o.0, u.1 - o.1);
            let (vx, vy) = (v.0 - o.0, v.1 - o.1);
            (ux * vy - uy * vx).atan2(ux * vx + uy * vy).abs()
        };
        let b = (bx, by);
        let got = loop_closure(&g, 0, x).unwrap();
        assert!((got.q_j + ang(p, a, b)).abs() < 1e-12);
        assert!((got.q_j1 + ang(a, p, b)).abs() < 1e-12);
        assert!((got.q_j2 + ang(b, p, a)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_strokes_name_the_inequality() {
        let g = geom();
        match loop_closure(&g, 1, 1.0) {
            Err(Error::InfeasibleStroke { chain, inequality, .. }) => {
                assert_eq!(chain, 1);
                assert!(inequality.contains("< L_j + L_j1"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match loop_closure(&g, 0, -1.1) {
            Err(Error::InfeasibleStroke { inequality, .. }) => assert!(inequality.contains("> |L_j - L_j1|")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let g = geom();
        let h = 1e-5;
        for k in 1..20 {
            let x = g.stroke_max * k as f64 / 20.0;
            let m = loop_closure_motion(&g, 0, x, 1.0, 0.0).unwrap();
            let mp = loop_closure_motion(&g, 0, x + h, 1.0, 0.0).unwrap();
            let mm = loop_closure_motion(&g, 0, x - h, 1.0, 0.0).unwrap();
            for i in 0..3 {
                let fd1 = (mp[i].value - mm[i].value) / (2.0 * h);
                let fd2 = (mp[i].rate - mm[i].rate) / (2.0 * h);
                assert!((m[i].rate - fd1).abs() < 1e-8 * (1.0 + fd1.abs()));
                assert!((m[i].accel - fd2).abs() < 1e-6 * (1.0 + fd2.abs()));
            }
            // Angle sum is constant, so rates and accelerations sum to zero.
            let sr: f64 = m.iter().map(|a| a.rate).sum();
            let sa: f64 = m.iter().map(|a| a.accel).sum();
            assert!(sr.abs() < 1e-12 && sa.abs() < 1e-11);
        }
    }

    #[test]
    fn validation() {
        let mut g = geom();
        assert!(g.validate(0).is_ok());
        g.stroke_max = 0.8;
        assert!(g.validate(0).is_err());
        let mut g = geom();
        g.l_j = -1.0;
        assert!(g.validate(0).is_err());
    }
}
