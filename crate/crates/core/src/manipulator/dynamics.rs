use super::{forward_pass, ChainModel, Kinematics};
use crate::error::{Error, Result};
use crate::spatial::{kinetic_energy, net_force, SpatialForce, Vec3};

/// Singularity threshold on |sin q_j2|.
pub const SINGULAR_SIN: f64 = 1e-6;

/// Net body forces and subtree forces per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameForces {
    /// Force required by the body attached to the frame (zero if massless).
    pub net: Vec<SpatialForce>,
    /// Force transmitted into the frame from its parent, i.e. the net force of
    /// the whole subtree; zero at the cut points.
    pub subtree: Vec<SpatialForce>,
}

/// Leaf-to-root force recursion over the cut tree.
pub fn backward_forces(model: &ChainModel, kin: &Kinematics) -> FrameForces {
    let n = model.frames.len();
    let net: Vec<SpatialForce> = (0..n)
        .map(|i| match &model.frames[i].body {
            Some(b) => net_force(
                b,
                &kin.velocities[i],
                &kin.accelerations[i],
                &kin.poses[i].rotation.transpose(),
            ),
            None => SpatialForce::zero(),
        })
        .collect();
    let mut subtree = net.clone();
    for i in (1..n).rev() {
        let p = model.frames[i].parent.expect("non-root frame has a parent");
        let f = kin.relative[i].force_to_parent(&subtree[i]);
        subtree[p] += f;
    }
    FrameForces { net, subtree }
}

/// Piston forces of the closed chains followed by the telescope force.
pub fn actuator_forces(model: &ChainModel, kin: &Kinematics, forces: &FrameForces) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(model.n_joints());
    for (j, (cf, spec)) in model.chain_frames.iter().zip(&model.spec().chains).enumerate() {
        let g = &spec.geometry;
        let q_j2 = kin.closures[j][2].value;
        let sin2 = q_j2.sin();
        if sin2.abs() < SINGULAR_SIN {
            return Err(Error::Singular { chain: j, value: sin2.abs() });
        }
        let s = kin.q[j] + g.x_j0();
        let d4 = s - g.l_cj;
        let f3 = forces.net[cf.barrel];
        let f4 = forces.net[cf.rod];
        // Moment about the cylinder base A of barrel and rod.
        let m_a = f3.angular.z + f4.angular.z + d4 * f4.linear.y;
        // Moment about the boom pivot of everything carried by the boom.
        let tau_p = forces.subtree[cf.boom].angular.z;
        out.push(f4.linear.x + tau_p / (g.l_j1 * sin2) + m_a / (s * q_j2.tan()));
    }
    out.push(forces.subtree[model.extension].linear.x);
    Ok(out)
}

/// Output of the closed-chain inverse dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct RneaOutput {
    /// Piston and telescope velocities (m/s).
    pub v_x: Vec<f64>,
    /// Piston and telescope forces (N).
    pub f_x: Vec<f64>,
}

/// Inverse dynamics: actuator velocities and forces for stroke motion.
pub fn rnea(model: &ChainModel, q: &[f64], qd: &[f64], qdd: &[f64]) -> Result<RneaOutput> {
    let kin = forward_pass(model, q, qd, qdd)?;
    let forces = backward_forces(model, &kin);
    let f_x = actuator_forces(model, &kin, &forces)?;
    Ok(RneaOutput { v_x: qd.to_vec(), f_x })
}

/// Wrench the ground exerts on the base, in `G` coordinates.
pub fn ground_wrench(model: &ChainModel, kin: &Kinematics) -> SpatialForce {
    backward_forces(model, kin).subtree[0]
}

/// Kinetic plus gravitational potential energy.
pub fn mechanical_energy(model: &ChainModel, q: &[f64], qd: &[f64]) -> Result<f64> {
    let zero = vec![0.0; q.len()];
    let kin = forward_pass(model, q, qd, &zero)?;
    let mut e = 0.0;
    for (i, f) in model.frames.iter().enumerate() {
        if let Some(b) = &f.body {
            let pose = kin.poses[i];
            let com = pose.position + pose.rotation * b.com_vec();
            e += kinetic_energy(b, &kin.velocities[i]) + b.mass * Vec3::from(b.gravity).dot(&com);
        }
    }
    Ok(e)
}
