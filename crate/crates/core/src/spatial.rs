//! Six-dimensional velocity and force vectors and their frame transforms.
//!
//! A spatial velocity is `[v; ω]` and a spatial force `[f; m]`, both
//! expressed in the coordinates of the frame they are attached to.

use std::marker::PhantomData;
use std::ops::{Add, AddAssign, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Gravity vector in the inertial frame, z pointing up.
pub const GRAVITY: [f64; 3] = [0.0, 0.0, 9.81];

pub fn skew(r: &Vec3) -> Mat3 {
    Mat3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

/// Rotation about the local z axis.
pub fn rot_z(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_x(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VelocityRole;
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForceRole;

/// Six-vector tagged as velocity-like or force-like.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialVec6<R> {
    pub linear: Vec3,
    pub angular: Vec3,
    role: PhantomData<R>,
}

pub type SpatialVelocity = SpatialVec6<VelocityRole>;
pub type SpatialForce = SpatialVec6<ForceRole>;

impl<R> SpatialVec6<R> {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        SpatialVec6 { linear, angular, role: PhantomData }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.linear.norm_squared() + self.angular.norm_squared()).sqrt()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.linear * k, self.angular * k)
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

impl SpatialVelocity {
    /// Power of a force acting on this velocity, both in the same frame.
    pub fn power(&self, f: &SpatialForce) -> f64 {
        self.linear.dot(&f.linear) + self.angular.dot(&f.angular)
    }
}

impl<R> Add for SpatialVec6<R> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.linear + o.linear, self.angular + o.angular)
    }
}

impl<R> AddAssign for SpatialVec6<R> {
    fn add_assign(&mut self, o: Self) {
        self.linear += o.linear;
        self.angular += o.angular;
    }
}

impl<R> Sub for SpatialVec6<R> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.linear - o.linear, self.angular - o.angular)
    }
}

impl<R> Neg for SpatialVec6<R> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.linear, -self.angular)
    }
}

/// Placement of frame B in frame A: rotation ᴬR_B and origin offset ᴬr_AB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformU {
    pub rotation: Mat3,
    pub offset: Vec3,
}

/// Builds a transform after checking that `rotation` is a proper rotation.
pub fn compose_transform(rotation: Mat3, offset: Vec3) -> Result<TransformU> {
    let err = (rotation.transpose() * rotation - Mat3::identity()).amax();
    if err > 1e-10 || (rotation.determinant() - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("rotation", "not a proper orthonormal matrix"));
    }
    if !offset.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("transform offset".into()));
    }
    Ok(TransformU { rotation, offset })
}

impl TransformU {
    pub fn identity() -> Self {
        TransformU { rotation: Mat3::identity(), offset: Vec3::zeros() }
    }

    /// The 6×6 matrix ᴬU_B = [[R, 0], [(r×)R, R]].
    pub fn matrix(&self) -> Matrix6<f64> {
        let mut u = Matrix6::zeros();
        let r = self.rotation;
        u.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        u.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        u.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&self.offset) * r));
        u
    }

    /// ᴮV = ᴬU_Bᵀ ᴬV.
    pub fn velocity_to_child(&self, v: &SpatialVelocity) -> SpatialVelocity {
        let rt = self.rotation.transpose();
        SpatialVelocity::new(
            rt * (v.linear + v.angular.cross(&self.offset)),
            rt * v.angular,
        )
    }

    /// ᴬF = ᴬU_B ᴮF.
    pub fn force_to_parent(&self, f: &SpatialForce) -> SpatialForce {
        let rf = self.rotation * f.linear;
        SpatialForce::new(rf, self.offset.cross(&rf) + self.rotation * f.angular)
    }

    /// Placement of C in A given `self` = A→B and `next` = B→C.
    pub fn then(&self, next: &TransformU) -> TransformU {
        TransformU {
            rotation: self.rotation * next.rotation,
            offset: self.offset + self.rotation * next.offset,
        }
    }
}

/// Mass properties of one rigid body attached to a frame.
///
/// `inertia` is taken about the center of mass, expressed in the frame axes.
/// `gravity` is the inertial-frame vector opposing the gravitational pull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidBodyParams {
    pub mass: f64,
    pub inertia: [[f64; 3]; 3],
    pub com: [f64; 3],
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
}

fn default_gravity() -> [f64; 3] {
    GRAVITY
}

impl RigidBodyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::invalid("mass", "must be positive"));
        }
        let i = self.inertia_matrix();
        if (i - i.transpose()).amax() > 1e-12 * (1.0 + i.amax()) {
            return Err(Error::invalid("inertia", "must be symmetric"));
        }
        if i.cholesky().is_none() {
            return Err(Error::invalid("inertia", "must be positive definite"));
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Mat3 {
        Mat3::from_fn(|r, c| self.inertia[r][c])
    }

    pub fn com_vec(&self) -> Vec3 {
        Vec3::from(self.com)
    }

    /// Mass matrix M_A.
    pub fn mass_matrix(&self) -> Matrix6<f64> {
        let m = self.mass;
        let rx = skew(&self.com_vec());
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() * m));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-m * rx));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m * rx));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(self.inertia_matrix() - m * rx * rx));
        out
    }

    /// Coriolis and centrifugal matrix C_A(ω).
    pub fn coriolis_matrix(&self, omega: &Vec3) -> Matrix6<f64> {
        let m = self.mass;
        let rx = skew(&self.com_vec());
        let wx = skew(omega);
        let i = self.inertia_matrix();
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(m * wx));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-m * wx * rx));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m * rx * wx));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(wx * i + i * wx - m * rx * wx * rx));
        out
    }

    /// Gravity term G_A for a frame whose inertial-to-frame rotation is `r_ai`.
    pub fn gravity_wrench(&self, r_ai: &Mat3) -> SpatialForce {
        let g = r_ai * Vec3::from(self.gravity) * self.mass;
        SpatialForce::new(g, self.com_vec().cross(&g))
    }

    pub fn scaled_mass(&self, k: f64) -> Self {
        let mut out = *self;
        out.mass *= k;
        for row in out.inertia.iter_mut() {
            for v in row.iter_mut() {
                *v *= k;
            }
        }
        out
    }
}

/// Net force F* = M_A dV/dt + C_A(ω) V + G_A required to move the body.
pub fn net_force(
    body: &RigidBodyParams,
    v: &SpatialVelocity,
    dv: &SpatialVelocity,
    r_ai: &Mat3,
) -> SpatialForce {
    let m = body.mass;
    let c = body.com_vec();
    let i = body.inertia_matrix();
    let w = v.angular;
    let a = dv.linear;
    let al = dv.angular;
    // Expanded block products of M_A and C_A.
    let f = m * (a - c.cross(&al)) + m * (w.cross(&v.linear) - w.cross(&c.cross(&w)));
    let inertia_c = i - m * skew(&c) * skew(&c);
    let mo = m * c.cross(&a)
        + inertia_c * al
        + m * c.cross(&w.cross(&v.linear))
        + w.cross(&(i * w))
        + i * w.cross(&w)
        - m * c.cross(&w.cross(&c.cross(&w)));
    SpatialForce::new(f, mo) + body.gravity_wrench(r_ai)
}

/// Kinetic energy ½ Vᵀ M_A V.
pub fn kinetic_energy(body: &RigidBodyParams, v: &SpatialVelocity) -> f64 {
    let x = v.to_vector();
    0.5 * (x.transpose() * body.mass_matrix() * x)[(0, 0)]
}
