//! Rigid-body geometry shared by every stage: the [`PoseSE3`] type and the
//! SO(3)/SE(3) exponential and logarithm maps with their Jacobians.
//!
//! Tangent vectors of SE(3) are ordered `(rho, phi)`: translation part first,
//! rotation part second. Perturbations are applied on the right,
//! `T <- T * exp(delta)`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

const SMALL_ANGLE: f64 = 1e-6;

/// Rigid transform mapping sensor coordinates into a parent frame:
/// `p_parent = rotation * p_sensor + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Relative motion between two sensor frames. Same representation as a pose.
pub type RigidTransform = PoseSE3;

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(rot_z(yaw), translation)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Inverse transform of a point, `R^T (p - t)`.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Right perturbation `self * exp(delta)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> PoseSE3 {
        self.compose(&se3_exp(delta))
    }

    pub fn log(&self) -> Vector6<f64> {
        se3_log(self)
    }

    /// Deviation of the rotation block from SO(3), `||R^T R - I||_F`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Projects the rotation block back onto SO(3) (nearest rotation in the
    /// Frobenius sense).
    pub fn renormalized(&self) -> PoseSE3 {
        PoseSE3 {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    /// Re-orthonormalizes only when drift exceeds `tol`.
    pub fn renormalize_if_needed(&mut self, tol: f64) {
        if self.orthonormality_error() > tol || (self.rotation.determinant() - 1.0).abs() > tol {
            *self = self.renormalized();
        }
    }

    /// Row-major 3x4 `[R | t]`, the KITTI pose layout.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> PoseSE3 {
        PoseSE3 {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }

    /// SE(3) adjoint in `(rho, phi)` ordering.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        let r = self.rotation;
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(skew(&self.translation) * r));
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad
    }
}

/// Frobenius distance between two rotation matrices.
pub fn chordal_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).norm()
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rodrigues formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < SMALL_ANGLE {
        return vee * (0.5 + theta * theta / 12.0);
    }
    if std::f64::consts::PI - theta < 1e-5 {
        // Near pi the antisymmetric part vanishes; recover the axis from the
        // symmetric part instead.
        let b = (r + Matrix3::identity()) * 0.5;
        let mut axis = Vector3::new(
            b[(0, 0)].max(0.0).sqrt(),
            b[(1, 1)].max(0.0).sqrt(),
            b[(2, 2)].max(0.0).sqrt(),
        );
        let i = axis.imax();
        for j in 0..3 {
            if j != i && b[(i, j)] < 0.0 {
                axis[j] = -axis[j];
            }
        }
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
        return axis.normalize() * theta;
    }
    vee * (theta / (2.0 * theta.sin()))
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn se3_exp(xi: &Vector6<f64>) -> PoseSE3 {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    PoseSE3 {
        rotation: so3_exp(&phi),
        translation: so3_left_jacobian(&phi) * rho,
    }
}

pub fn se3_log(t: &PoseSE3) -> Vector6<f64> {
    let phi = so3_log(&t.rotation);
    let rho = so3_left_jacobian_inv(&phi) * t.translation;
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&rho);
    xi.fixed_rows_mut::<3>(3).copy_from(&phi);
    xi
}

/// Coupling block `Q(rho, phi)` of the SE(3) left Jacobian.
fn se3_q(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let p = skew(phi);
    let r = skew(rho);
    let (c1, c2, c3) = if theta < 1e-4 {
        (
            1.0 / 6.0 - theta2 / 120.0,
            1.0 / 24.0 - theta2 / 720.0,
            1.0 / 120.0 - theta2 / 2520.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = theta2 * theta;
        (
            (theta - s) / t3,
            (theta2 + 2.0 * c - 2.0) / (2.0 * theta2 * theta2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta2 * t3),
        )
    };
    let pr = p * r;
    let rp = r * p;
    let prp = p * r * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

/// Inverse of the SE(3) right Jacobian, `J_r^{-1}(xi) = J_l^{-1}(-xi)`.
pub fn se3_right_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    let rho = -xi.fixed_rows::<3>(0).into_owned();
    let phi = -xi.fixed_rows::<3>(3).into_owned();
    let jinv = so3_left_jacobian_inv(&phi);
    let q = se3_q(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-(jinv * q * jinv)));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec6(v: [f64; 6]) -> Vector6<f64> {
        Vector6::from_column_slice(&v)
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = se3_exp(&vec6([1.0, -2.0, 0.5, 0.3, -0.2, 1.1]));
        let i = t.compose(&t.inverse());
        assert!((i.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(i.translation.norm() < 1e-12);
    }

    #[test]
    fn so3_log_near_pi() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        for &angle in &[
            std::f64::consts::PI - 1e-7,
            std::f64::consts::PI - 1e-3,
            3.0,
        ] {
            let phi = axis * angle;
            let back = so3_log(&so3_exp(&phi));
            assert!((back - phi).norm() < 1e-6, "angle {angle}: {back:?}");
        }
    }

    #[test]
    fn row_major_round_trip() {
        let t = se3_exp(&vec6([4.0, 5.0, 6.0, 0.1, 0.2, 0.3]));
        let back = PoseSE3::from_row_major(&t.to_row_major());
        assert_eq!(t, back);
    }

    #[test]
    fn right_jacobian_inverse_matches_finite_differences() {
        // d log(exp(xi) exp(d)) / dd at d = 0 equals J_r^{-1}(xi)
        let xi = vec6([0.7, -1.3, 2.0, 0.4, -0.9, 0.6]);
        let base = se3_exp(&xi);
        let analytic = se3_right_jacobian_inv(&xi);
        let h = 1e-6;
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let plus = base.retract(&d).log();
            let minus = base.retract(&-d).log();
            let col = (plus - minus) / (2.0 * h);
            assert!(
                (col - analytic.column(k)).norm() < 1e-6,
                "column {k}: {col:?} vs {:?}",
                analytic.column(k)
            );
        }
    }

    proptest! {
        #[test]
        fn se3_exp_log_round_trip(
            r in prop::array::uniform3(-20.0f64..20.0),
            p in prop::array::uniform3(-1.5f64..1.5),
        ) {
            let xi = vec6([r[0], r[1], r[2], p[0], p[1], p[2]]);
            let back = se3_exp(&xi).log();
            prop_assert!((back - xi).norm() < 1e-9 * (1.0 + xi.norm()));
        }

        #[test]
        fn adjoint_moves_perturbations(
            r in prop::array::uniform3(-5.0f64..5.0),
            p in prop::array::uniform3(-1.0f64..1.0),
            d in prop::array::uniform3(-0.1f64..0.1),
        ) {
            // T exp(d) = exp(Ad_T d) T
            let t = se3_exp(&vec6([r[0], r[1], r[2], p[0], p[1], p[2]]));
            let delta = vec6([d[0], d[1], d[2], d[2], d[0], -d[1]]);
            let lhs = t.retract(&delta);
            let rhs = se3_exp(&(t.adjoint() * delta)).compose(&t);
            prop_assert!((lhs.rotation - rhs.rotation).norm() < 1e-10);
            prop_assert!((lhs.translation - rhs.translation).norm() < 1e-9);
        }
    }
}
