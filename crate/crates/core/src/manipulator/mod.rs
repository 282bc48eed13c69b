//! Closed-chain kinematics and inverse dynamics of the three-joint boom.
//!
//! Frames follow the virtual decomposition of the mechanism. For closed chain
//! j the frames are
//!
//! * `B0j`: fixed on the parent body at the boom pivot P, x axis toward the
//!   cylinder base A.
//! * `B1j`: the boom, rotated by q_j about z (q_j < 0, clockwise from P→A).
//! * `T1j`: on the boom at the rod eye B, a cut point.
//! * `B2j`: fixed at A with x axis pointing back toward P.
//! * `B3j`: the cylinder barrel, rotated by −q_j1, x axis along A→B.
//! * `B4j`: the piston rod, translated along x by x_j + x_j0 − l_cj.
//! * `T2j`: on the rod at B, rotated by −q_j2 so it coincides with `T1j`.
//!
//! Chain 1 hangs from the base frame `O0`, chain j+1 from boom j. The
//! telescope `E1` slides along x of a fixed frame `Bc3` on the last boom.
//! All mechanism geometry lies in the xy plane of `O0`; `G` has z up.

mod closure;
mod dynamics;
mod kinematics;

pub use closure::{loop_closure, loop_closure_motion, AngleMotion, ClosedChainGeometry, ClosureAngles};
pub use dynamics::{
    actuator_forces, backward_forces, ground_wrench, mechanical_energy, rnea, FrameForces,
    RneaOutput,
};
pub use kinematics::{
    closure_residuals, forward_kinematics, forward_pass, forward_velocities, tip_position,
    Kinematics, Pose,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{compose_transform, rot_x, rot_z, RigidBodyParams, TransformU, Vec3};

/// Placement in the xy plane of the parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarMount {
    pub x: f64,
    pub y: f64,
    /// Rotation about the parent z axis in rad.
    pub angle: f64,
}

impl PlanarMount {
    fn transform(&self) -> Result<TransformU> {
        compose_transform(rot_z(self.angle), Vec3::new(self.x, self.y, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedChainSpec {
    pub name: String,
    /// Boom pivot P on the parent body; `angle` is the direction P→A.
    pub mount: PlanarMount,
    pub geometry: ClosedChainGeometry,
    pub boom: RigidBodyParams,
    pub barrel: RigidBodyParams,
    pub rod: RigidBodyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelescopeSpec {
    pub name: String,
    /// Slide frame on the last boom.
    pub mount: PlanarMount,
    /// Offset of the extension frame at zero stroke.
    pub x0: f64,
    pub stroke_min: f64,
    pub stroke_max: f64,
    /// Extension body including payload.
    pub body: RigidBodyParams,
    /// Tool point in the extension frame.
    pub tip: [f64; 3],
}

/// Full mechanism description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorSpec {
    pub name: String,
    #[serde(default)]
    pub note: String,
    /// Rotation of `O0` about the x axis of `G`.
    pub base_tilt: f64,
    pub base_offset: [f64; 3],
    pub base_body: RigidBodyParams,
    pub chains: Vec<ClosedChainSpec>,
    pub telescope: TelescopeSpec,
}

/// Source of a joint coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Coord {
    Pivot(usize),
    Anchor(usize),
    RodEye(usize),
    Stroke(usize),
    Telescope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Joint {
    Fixed,
    Revolute(Coord),
    Prismatic(Coord),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Frame {
    pub name: String,
    pub parent: Option<usize>,
    /// Placement in the parent at zero joint value.
    pub placement: TransformU,
    pub joint: Joint,
    pub body: Option<RigidBodyParams>,
}

/// Frame indices of one closed chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ChainFrames {
    pub boom: usize,
    pub barrel: usize,
    pub rod: usize,
    pub t1: usize,
    pub t2: usize,
}

/// Immutable tree of frames after cutting each closed chain at the rod eye.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    spec: ManipulatorSpec,
    pub(crate) frames: Vec<Frame>,
    pub(crate) chain_frames: Vec<ChainFrames>,
    pub(crate) extension: usize,
    pub(crate) tip: usize,
}

impl ChainModel {
    pub fn new(spec: ManipulatorSpec) -> Result<Self> {
        if spec.chains.is_empty() {
            return Err(Error::invalid("chains", "at least one closed chain is required"));
        }
        spec.base_body.validate()?;
        let t = &spec.telescope;
        t.body.validate()?;
        if !(t.stroke_min < t.stroke_max) {
            return Err(Error::invalid("telescope stroke", "min must be below max"));
        }
        let mut frames = vec![Frame {
            name: "G".into(),
            parent: None,
            placement: TransformU::identity(),
            joint: Joint::Fixed,
            body: None,
        }];
        let push = |frames: &mut Vec<Frame>, name: String, parent: usize, placement, joint, body| {
            frames.push(Frame { name, parent: Some(parent), placement, joint, body });
            frames.len() - 1
        };
        let base = push(
            &mut frames,
            "O0".into(),
            0,
            compose_transform(rot_x(spec.base_tilt), Vec3::from(spec.base_offset))?,
            Joint::Fixed,
            Some(spec.base_body),
        );
        let mut parent = base;
        let mut chain_frames = Vec::new();
        for (j, c) in spec.chains.iter().enumerate() {
            c.geometry.validate(j)?;
            for b in [&c.boom, &c.barrel, &c.rod] {
                b.validate()?;
            }
            let g = &c.geometry;
            let n = j + 1;
            let b0 = push(&mut frames, format!("B0{n}"), parent, c.mount.transform()?, Joint::Fixed, None);
            let boom = push(
                &mut frames,
                format!("B1{n}"),
                b0,
                TransformU::identity(),
                Joint::Revolute(Coord::Pivot(j)),
                Some(c.boom),
            );
            let t1 = push(
                &mut frames,
                format!("T1{n}"),
                boom,
                compose_transform(rot_z(0.0), Vec3::new(g.l_j1, 0.0, 0.0))?,
                Joint::Fixed,
                None,
            );
            let b2 = push(
                &mut frames,
                format!("B2{n}"),
                b0,
                compose_transform(rot_z(std::f64::consts::PI), Vec3::new(g.l_j, 0.0, 0.0))?,
                Joint::Fixed,
                None,
            );
            let barrel = push(
                &mut frames,
                format!("B3{n}"),
                b2,
                TransformU::identity(),
                Joint::Revolute(Coord::Anchor(j)),
                Some(c.barrel),
            );
            let rod = push(
                &mut frames,
                format!("B4{n}"),
                barrel,
                TransformU::identity(),
                Joint::Prismatic(Coord::Stroke(j)),
                Some(c.rod),
            );
            let t2 = push(
                &mut frames,
                format!("T2{n}"),
                rod,
                compose_transform(rot_z(0.0), Vec3::new(g.l_cj, 0.0, 0.0))?,
                Joint::Revolute(Coord::RodEye(j)),
                None,
            );
            chain_frames.push(ChainFrames { boom, barrel, rod, t1, t2 });
            parent = boom;
        }
        let slide = push(&mut frames, "Bc3".into(), parent, t.mount.transform()?, Joint::Fixed, None);
        let extension = push(
            &mut frames,
            "E1".into(),
            slide,
            TransformU::identity(),
            Joint::Prismatic(Coord::Telescope),
            Some(t.body),
        );
        let tip = push(
            &mut frames,
            "TCP".into(),
            extension,
            compose_transform(rot_z(0.0), Vec3::from(t.tip))?,
            Joint::Fixed,
            None,
        );
        Ok(ChainModel { spec, frames, chain_frames, extension, tip })
    }

    pub fn spec(&self) -> &ManipulatorSpec {
        &self.spec
    }

    /// Number of actuated joints (closed chains plus the telescope).
    pub fn n_joints(&self) -> usize {
        self.spec.chains.len() + 1
    }

    pub fn frame_names(&self) -> Vec<&str> {
        self.frames.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn frame_index(&self, name: &str) -> Option<usize> {
        self.frames.iter().position(|f| f.name == name)
    }

    /// Stroke limits per joint in m.
    pub fn stroke_limits(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<_> =
            self.spec.chains.iter().map(|c| (c.geometry.stroke_min, c.geometry.stroke_max)).collect();
        out.push((self.spec.telescope.stroke_min, self.spec.telescope.stroke_max));
        out
    }

    /// Total mass of all bodies.
    pub fn total_mass(&self) -> f64 {
        self.frames.iter().filter_map(|f| f.body.map(|b| b.mass)).sum()
    }

    /// Copy with every body mass and inertia multiplied by `k`.
    pub fn with_mass_scale(&self, k: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.base_body = spec.base_body.scaled_mass(k);
        for c in &mut spec.chains {
            c.boom = c.boom.scaled_mass(k);
            c.barrel = c.barrel.scaled_mass(k);
            c.rod = c.rod.scaled_mass(k);
        }
        spec.telescope.body = spec.telescope.body.scaled_mass(k);
        ChainModel::new(spec)
    }

    /// Copy with every body's gravity vector replaced by `g`.
    pub fn with_gravity(&self, g: [f64; 3]) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.base_body.gravity = g;
        for c in &mut spec.chains {
            c.boom.gravity = g;
            c.barrel.gravity = g;
            c.rod.gravity = g;
        }
        spec.telescope.body.gravity = g;
        ChainModel::new(spec)
    }

    pub(crate) fn check_len(&self, what: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.n_joints() {
            return Err(Error::invalid(what, format!("expected {} entries, got {}", self.n_joints(), v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what.into()));
        }
        Ok(())
    }
}
