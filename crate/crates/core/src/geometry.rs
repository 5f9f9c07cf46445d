//! Rigid transforms, axis-angle rotations and pinhole projection.
//!
//! Poses are stored as a translation `T` and an axis-angle vector `Ω` (axis
//! times angle). A pose maps points from a source frame into a target frame,
//! `p' = R(Ω)·p + T`. Camera frames are right-handed with `z` pointing forward
//! and the pixel origin at the top-left corner of the image.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this rotation angle the exponential map and its derivative switch to
/// their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;

/// Minimum depth a point must have to be projected.
pub const MIN_DEPTH: f64 = 1e-9;

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential map `exp(Ω^)`.
pub fn rotation_from_axis_angle(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Logarithm of a rotation matrix, returned as an axis-angle vector with
/// angle in `[0, π]`.
pub fn axis_angle_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    // Through the quaternion: the matrix skew part vanishes at a half turn.
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r)).scaled_axis()
}

/// The three matrices `∂R/∂Ω_i`, evaluated at `Ω`.
///
/// Closed-form derivative of the exponential map,
/// `∂R/∂Ω_i = (Ω_i Ω^ + [Ω × (I − R) e_i]^) R / ‖Ω‖²`, with its limit
/// `[e_i]^` for small angles.
pub fn rotation_derivatives(omega: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = omega.norm_squared();
    if theta2.sqrt() < SMALL_ANGLE {
        return [skew(&Vector3::x()), skew(&Vector3::y()), skew(&Vector3::z())];
    }
    let r = rotation_from_axis_angle(omega);
    let k = skew(omega);
    let i_minus_r = Matrix3::identity() - r;
    std::array::from_fn(|i| {
        let col = omega.cross(&i_minus_r.column(i).into_owned());
        (k * omega[i] + skew(&col)) * r / theta2
    })
}

/// Jacobian of `R(Ω)·p` with respect to `Ω`, evaluated at the given `Ω`.
pub fn rotate_point_jacobian(omega: &Vector3<f64>, p: &Vector3<f64>) -> Matrix3<f64> {
    let d = rotation_derivatives(omega);
    Matrix3::from_columns(&[d[0] * p, d[1] * p, d[2] * p])
}

/// Rigid transform parameterized by translation and axis-angle rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Translation `T` (meters).
    #[serde(rename = "t")]
    pub translation: Vector3<f64>,
    /// Axis-angle rotation `Ω` (radians).
    #[serde(rename = "omega")]
    pub rotation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(t, Vector3::zeros())
    }

    /// Builds a pose from a rotation matrix and a translation.
    pub fn from_rt(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self::new(t, axis_angle_from_rotation(r))
    }

    /// Builds a pose from the six optimizer parameters `[T, Ω]`.
    pub fn from_params(p: &[f64; 6]) -> Self {
        Self::new(
            Vector3::new(p[0], p[1], p[2]),
            Vector3::new(p[3], p[4], p[5]),
        )
    }

    pub fn params(&self) -> [f64; 6] {
        let t = &self.translation;
        let r = &self.rotation;
        [t.x, t.y, t.z, r.x, r.y, r.z]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_from_axis_angle(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation_matrix().transpose();
        Self::new(-(rt * self.translation), -self.rotation)
    }

    /// Composition `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        let r1 = self.rotation_matrix();
        let r = r1 * other.rotation_matrix();
        Self::from_rt(&r, r1 * other.translation + self.translation)
    }

    /// Translation distance and rotation angle between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let dt = (self.translation - other.translation).norm();
        let dr = self.rotation_matrix() * other.rotation_matrix().transpose();
        (dt, rotation_angle(&dr))
    }
}

/// Angle of a rotation matrix, robust near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = 0.5
        * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
            .norm();
    s.atan2(c)
}

/// A sub-pixel image location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Undistorted pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "camera intrinsics out of range: {self:?}"
            )))
        }
    }

    /// Whether a sub-pixel location lies within `[margin, size-1-margin]`.
    #[inline]
    pub fn contains(&self, p: &ImagePoint, margin: f64) -> bool {
        p.x >= margin
            && p.y >= margin
            && p.x <= self.width as f64 - 1.0 - margin
            && p.y <= self.height as f64 - 1.0 - margin
    }

    /// Projects a camera-frame point. Fails when the point is not in front of
    /// the camera.
    #[inline]
    pub fn project(&self, p_cam: &Vector3<f64>) -> Result<ImagePoint> {
        if p_cam.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { z: p_cam.z });
        }
        Ok(self.project_unchecked(p_cam))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Vector3<f64>) -> ImagePoint {
        let iz = 1.0 / p.z;
        ImagePoint::new(self.fx * p.x * iz + self.cx, self.fy * p.y * iz + self.cy)
    }

    /// Back-projects a pixel into a unit-depth ray direction.
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    /// Jacobian of the projection with respect to the camera-frame point.
    #[inline]
    pub fn point_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }

    /// Intrinsics for an image resampled by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: (self.cx + 0.5) * scale - 0.5,
            cy: (self.cy + 0.5) * scale - 0.5,
            width: ((self.width as f64) * scale).round().max(1.0) as usize,
            height: ((self.height as f64) * scale).round().max(1.0) as usize,
        }
    }
}

/// Projects an object-frame point through `pose` and the camera.
pub fn project(intr: &CameraIntrinsics, pose: &Pose, p_obj: &Vector3<f64>) -> Result<ImagePoint> {
    intr.project(&pose.transform_point(p_obj))
}

/// Derivatives of the projected pixel of `p_obj` with respect to the pose
/// parameters `[T, Ω]`.
pub fn projection_jacobian(
    intr: &CameraIntrinsics,
    pose: &Pose,
    p_obj: &Vector3<f64>,
) -> Result<Matrix2x6<f64>> {
    let p_cam = pose.transform_point(p_obj);
    if p_cam.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { z: p_cam.z });
    }
    Ok(projection_jacobian_at(intr, &pose.rotation, p_obj, &p_cam))
}

/// Same as [`projection_jacobian`] with the transformed point precomputed.
#[inline]
pub(crate) fn projection_jacobian_at(
    intr: &CameraIntrinsics,
    omega: &Vector3<f64>,
    p_obj: &Vector3<f64>,
    p_cam: &Vector3<f64>,
) -> Matrix2x6<f64> {
    let jp = intr.point_jacobian(p_cam);
    let jr = jp * rotate_point_jacobian(omega, p_obj);
    let mut out = Matrix2x6::zeros();
    out.fixed_view_mut::<2, 3>(0, 0).copy_from(&jp);
    out.fixed_view_mut::<2, 3>(0, 3).copy_from(&jr);
    out
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Self { min, max })
    }

    /// Bounds of `points` after applying `pose`.
    pub fn of_transformed(points: &[Vector3<f64>], pose: &Pose) -> Option<Self> {
        let r = pose.rotation_matrix();
        let moved: Vec<_> = points.iter().map(|p| r * p + pose.translation).collect();
        Self::from_points(&moved)
    }

    /// Overlap test after growing both boxes by `margin`.
    pub fn intersects(&self, other: &Aabb, margin: f64) -> bool {
        (0..3).all(|k| self.min[k] - margin <= other.max[k] + margin && other.min[k] - margin <= self.max[k] + margin)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) / 2.0
    }
}

/// Camera pose looking from `eye` towards `target`. Returns the transform
/// from world to camera coordinates. `up` selects the image "up" direction;
/// the camera `y` axis points away from it.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let mut x = z.cross(up);
    if x.norm() < 1e-9 {
        // Looking along `up`: pick any perpendicular axis deterministically.
        let alt = if z.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        x = alt - z * z.dot(&alt);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    // Rows of the world-to-camera rotation are the camera axes in world frame.
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::from_rt(&r, -(r * eye))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_omega(rng: &mut ChaCha8Rng, max: f64) -> Vector3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        axis * rng.random_range(0.0..max)
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(rotation_from_axis_angle(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_x() {
        let r = rotation_from_axis_angle(&Vector3::new(PI / 2.0, 0.0, 0.0));
        let v = r * Vector3::new(0.0, 1.0, 0.0);
        assert!((v - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn half_turn_log_is_recovered() {
        for axis in [Vector3::x(), Vector3::y(), Vector3::new(1.0, 2.0, -2.0).normalize()] {
            let r = rotation_from_axis_angle(&(axis * PI));
            let w = axis_angle_from_rotation(&r);
            assert!((w.norm() - PI).abs() < 1e-9);
            assert!((rotation_from_axis_angle(&w) - r).norm() < 1e-9);
        }
    }

    #[test]
    fn rodrigues_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let w = random_omega(&mut rng, PI);
            let r = rotation_from_axis_angle(&w);
            let q = UnitQuaternion::from_scaled_axis(w).to_rotation_matrix();
            assert!((r - q.matrix()).norm() < 1e-9);
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            let back = rotation_from_axis_angle(&-w);
            assert!((r * back - Matrix3::identity()).norm() < 1e-9);
        }
    }

    #[test]
    fn transform_and_inverse_round_trip() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(&p), p);
        let shift = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(shift.transform_point(&Vector3::zeros()), Vector3::new(1.0, 0.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let pose = Pose::new(
                Vector3::new(rng.random(), rng.random(), rng.random()),
                random_omega(&mut rng, 3.0),
            );
            let q = pose.inverse().transform_point(&pose.transform_point(&p));
            assert!((q - p).norm() < 1e-9);
            let id = pose.compose(&pose.inverse());
            assert!(id.translation.norm() < 1e-9 && id.rotation.norm() < 1e-9);
        }
    }

    #[test]
    fn projection_examples() {
        let c = intr();
        let a = c.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((a.x, a.y), (320.0, 240.0));
        let b = c.project(&Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert!((b.x - 370.0).abs() < 1e-12 && b.y == 240.0);
        assert!(matches!(
            c.project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn doubling_depth_halves_offset() {
        let c = intr();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.1..3.0),
            );
            let a = c.project(&p).unwrap();
            let b = c.project(&Vector3::new(p.x, p.y, 2.0 * p.z)).unwrap();
            assert!(((b.x - c.cx) * 2.0 - (a.x - c.cx)).abs() < 1e-9);
            assert!(((b.y - c.cy) * 2.0 - (a.y - c.cy)).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_translation_column_on_axis() {
        let c = intr();
        let j = projection_jacobian(&c, &Pose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((j[(0, 0)] - 500.0).abs() < 1e-12 && j[(1, 0)].abs() < 1e-12);
        let j2 = projection_jacobian(&c, &Pose::identity(), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert!((j2[(0, 0)] - 250.0).abs() < 1e-12);
    }

    /// Central finite differences of the projection, used as an oracle.
    pub(crate) fn fd_projection_jacobian(
        c: &CameraIntrinsics,
        pose: &Pose,
        p: &Vector3<f64>,
        h: f64,
    ) -> Matrix2x6<f64> {
        let base = pose.params();
        let mut out = Matrix2x6::zeros();
        for k in 0..6 {
            let mut plus = base;
            let mut minus = base;
            plus[k] += h;
            minus[k] -= h;
            let a = project(c, &Pose::from_params(&plus), p).unwrap();
            let b = project(c, &Pose::from_params(&minus), p).unwrap();
            out[(0, k)] = (a.x - b.x) / (2.0 * h);
            out[(1, k)] = (a.y - b.y) / (2.0 * h);
        }
        out
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = intr();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let pose = Pose::new(
                Vector3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(0.4..1.0),
                ),
                random_omega(&mut rng, 3.0),
            );
            let p = Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            let j = projection_jacobian(&c, &pose, &p).unwrap();
            let fd = fd_projection_jacobian(&c, &pose, &p, 1e-6);
            for (a, b) in j.iter().zip(fd.iter()) {
                if b.abs() < 1e-8 && a.abs() < 1e-8 {
                    continue;
                }
                assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn small_angle_jacobian_is_continuous() {
        let p = Vector3::new(0.3, -0.2, 0.5);
        let tiny = rotate_point_jacobian(&Vector3::new(1e-8, 0.0, 0.0), &p);
        let small = rotate_point_jacobian(&Vector3::new(2e-6, 0.0, 0.0), &p);
        assert!((tiny - small).norm() < 1e-5);
    }

    #[test]
    fn look_at_centers_target() {
        let c = intr();
        let eye = Vector3::new(0.3, -0.2, 0.5);
        let target = Vector3::new(0.0, 0.0, 0.0);
        let pose = look_at(&eye, &target, &Vector3::z());
        let p = c.project(&pose.transform_point(&target)).unwrap();
        assert!((p.x - c.cx).abs() < 1e-9 && (p.y - c.cy).abs() < 1e-9);
        let zenith = look_at(&Vector3::new(0.0, 0.0, 1.0), &target, &Vector3::z());
        let q = c.project(&zenith.transform_point(&target)).unwrap();
        assert!((q.x - c.cx).abs() < 1e-9);
    }
}
