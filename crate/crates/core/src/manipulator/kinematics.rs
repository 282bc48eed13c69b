use super::{loop_closure_motion, AngleMotion, ChainModel, Coord, Joint};
use crate::error::Result;
use crate::spatial::{rot_z, Mat3, SpatialVelocity, TransformU, Vec3};

/// Orientation and origin of a frame in `G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub position: Vec3,
}

/// Result of the forward pass, indexed like the model frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub poses: Vec<Pose>,
    pub velocities: Vec<SpatialVelocity>,
    pub accelerations: Vec<SpatialVelocity>,
    /// Placement of each frame in its parent at the current configuration.
    pub relative: Vec<TransformU>,
    /// Closed-chain angles (q_j, q_j1, q_j2) per chain.
    pub closures: Vec<[AngleMotion; 3]>,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

fn coord_motion(model: &ChainModel, closures: &[[AngleMotion; 3]], c: Coord, q: &[f64], qd: &[f64], qdd: &[f64]) -> AngleMotion {
    let flip = |m: AngleMotion| AngleMotion { value: -m.value, rate: -m.rate, accel: -m.accel };
    match c {
        Coord::Pivot(j) => closures[j][0],
        Coord::Anchor(j) => flip(closures[j][1]),
        Coord::RodEye(j) => flip(closures[j][2]),
        Coord::Stroke(j) => {
            let g = &model.spec().chains[j].geometry;
            AngleMotion { value: q[j] + g.x_j0() - g.l_cj, rate: qd[j], accel: qdd[j] }
        }
        Coord::Telescope => {
            let k = model.n_joints() - 1;
            AngleMotion { value: q[k] + model.spec().telescope.x0, rate: qd[k], accel: qdd[k] }
        }
    }
}

/// Propagates poses, velocities and accelerations from the fixed ground.
///
/// `q` holds piston strokes followed by the telescope stroke.
pub fn forward_pass(model: &ChainModel, q: &[f64], qd: &[f64], qdd: &[f64]) -> Result<Kinematics> {
    model.check_len("q", q)?;
    model.check_len("qd", qd)?;
    model.check_len("qdd", qdd)?;
    let closures = model
        .spec()
        .chains
        .iter()
        .enumerate()
        .map(|(j, c)| loop_closure_motion(&c.geometry, j, q[j], qd[j], qdd[j]))
        .collect::<Result<Vec<_>>>()?;

    let n = model.frames.len();
    let mut poses = Vec::with_capacity(n);
    let mut vel = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    let mut relative = Vec::with_capacity(n);
    for f in &model.frames {
        let Some(p) = f.parent else {
            poses.push(Pose { rotation: Mat3::identity(), position: Vec3::zeros() });
            vel.push(SpatialVelocity::zero());
            acc.push(SpatialVelocity::zero());
            relative.push(TransformU::identity());
            continue;
        };
        let (rel, v, a) = match f.joint {
            Joint::Fixed => {
                let rel = f.placement;
                (rel, rel.velocity_to_child(&vel[p]), rel.velocity_to_child(&acc[p]))
            }
            Joint::Revolute(c) => {
                let m = coord_motion(model, &closures, c, q, qd, qdd);
                let rel = TransformU { rotation: f.placement.rotation * rot_z(m.value), offset: f.placement.offset };
                let vt = rel.velocity_to_child(&vel[p]);
                let at = rel.velocity_to_child(&acc[p]);
                let z = Vec3::z();
                let v = SpatialVelocity::new(vt.linear, vt.angular + z * m.rate);
                let bias = SpatialVelocity::new(-z.cross(&vt.linear) * m.rate, -z.cross(&vt.angular) * m.rate);
                let a = at + bias + SpatialVelocity::new(Vec3::zeros(), z * m.accel);
                (rel, v, a)
            }
            Joint::Prismatic(c) => {
                let m = coord_motion(model, &closures, c, q, qd, qdd);
                let axis = f.placement.rotation * Vec3::x();
                let rel = TransformU { rotation: f.placement.rotation, offset: f.placement.offset + axis * m.value };
                let vt = rel.velocity_to_child(&vel[p]);
                let at = rel.velocity_to_child(&acc[p]);
                let x = Vec3::x();
                let v = SpatialVelocity::new(vt.linear + x * m.rate, vt.angular);
                let rt = rel.rotation.transpose();
                let bias = SpatialVelocity::new(rt * vel[p].angular.cross(&(axis * m.rate)), Vec3::zeros());
                let a = at + bias + SpatialVelocity::new(x * m.accel, Vec3::zeros());
                (rel, v, a)
            }
        };
        let pp = poses[p];
        poses.push(Pose {
            rotation: pp.rotation * rel.rotation,
            position: pp.position + pp.rotation * rel.offset,
        });
        vel.push(v);
        acc.push(a);
        relative.push(rel);
    }
    Ok(Kinematics {
        poses,
        velocities: vel,
        accelerations: acc,
        relative,
        closures,
        q: q.to_vec(),
        qd: qd.to_vec(),
    })
}

/// Frame velocities for strokes `q` and stroke rates `qd`.
pub fn forward_velocities(model: &ChainModel, q: &[f64], qd: &[f64]) -> Result<Vec<SpatialVelocity>> {
    let zero = vec![0.0; q.len()];
    Ok(forward_pass(model, q, qd, &zero)?.velocities)
}

/// Poses of all frames for strokes `q`.
pub fn forward_kinematics(model: &ChainModel, q: &[f64]) -> Result<Vec<Pose>> {
    let zero = vec![0.0; q.len()];
    Ok(forward_pass(model, q, &zero, &zero)?.poses)
}

/// Tool point position in `G`.
pub fn tip_position(model: &ChainModel, q: &[f64]) -> Result<Vec3> {
    Ok(forward_kinematics(model, q)?[model.tip].position)
}

/// Per chain: (position gap, orientation gap, velocity gap, acceleration gap)
/// between the two sides of the cut at the rod eye.
pub fn closure_residuals(model: &ChainModel, kin: &Kinematics) -> Vec<[f64; 4]> {
    model
        .chain_frames
        .iter()
        .map(|c| {
            let (a, b) = (kin.poses[c.t1], kin.poses[c.t2]);
            [
                (a.position - b.position).norm(),
                (a.rotation - b.rotation).amax(),
                (kin.velocities[c.t1] - kin.velocities[c.t2]).norm(),
                (kin.accelerations[c.t1] - kin.accelerations[c.t2]).norm(),
            ]
        })
        .collect()
}
