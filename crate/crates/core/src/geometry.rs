//! Rigid transforms, the pinhole stereo camera and intensity point clouds.
//!
//! Rotations use the extrinsic X-Y-Z Euler convention everywhere in the crate:
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Nearest points closer than this to the image plane are never projected.
pub const Z_MIN: f64 = 0.1;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// A rigid transform as a translation (meters) and roll/pitch/yaw (radians).
///
/// Construct through [`Pose6::new`] to keep the angles normalized.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose6 {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl Pose6 {
    pub fn new(tx: f64, ty: f64, tz: f64, rx: f64, ry: f64, rz: f64) -> Self {
        Pose6 {
            tx,
            ty,
            tz,
            rx: normalize_angle(rx),
            ry: normalize_angle(ry),
            rz: normalize_angle(rz),
        }
    }

    /// Same as [`Pose6::new`] with the three angles given in degrees.
    pub fn from_degrees(tx: f64, ty: f64, tz: f64, rx: f64, ry: f64, rz: f64) -> Self {
        Pose6::new(tx, ty, tz, rx.to_radians(), ry.to_radians(), rz.to_radians())
    }

    pub fn identity() -> Self {
        Pose6::default()
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Pose6::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.tx, self.ty, self.tz)
    }

    pub fn rotation_degrees(&self) -> [f64; 3] {
        [
            self.rx.to_degrees(),
            self.ry.to_degrees(),
            self.rz.to_degrees(),
        ]
    }

    pub fn to_transform(&self) -> RigidTransform {
        pose_to_transform(self)
    }

    /// Component-wise difference `self - other`, angles wrapped, rotations in degrees.
    ///
    /// This is the per-axis error used when scoring an estimate against a reference.
    pub fn difference(&self, other: &Pose6) -> [f64; 6] {
        [
            self.tx - other.tx,
            self.ty - other.ty,
            self.tz - other.tz,
            normalize_angle(self.rx - other.rx).to_degrees(),
            normalize_angle(self.ry - other.ry).to_degrees(),
            normalize_angle(self.rz - other.rz).to_degrees(),
        ]
    }
}

/// Elementary rotation matrices.
fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn pose_to_transform(p: &Pose6) -> RigidTransform {
    RigidTransform {
        rotation: rot_z(p.rz) * rot_y(p.ry) * rot_x(p.rx),
        translation: p.translation(),
    }
}

/// Inverse of [`pose_to_transform`]; exact away from pitch = +-pi/2.
pub fn transform_to_pose(t: &RigidTransform) -> Pose6 {
    let r = &t.rotation;
    let pitch = (-r[(2, 0)]).atan2((r[(2, 1)].powi(2) + r[(2, 2)].powi(2)).sqrt());
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Pose6::new(
        t.translation.x,
        t.translation.y,
        t.translation.z,
        roll,
        pitch,
        yaw,
    )
}

/// A proper rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, projecting `rotation` onto SO(3) if it drifted.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        RigidTransform {
            rotation: orthonormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: orthonormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> RigidTransform {
        RigidTransform::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_pose(&self) -> Pose6 {
        transform_to_pose(self)
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

fn orthonormalize(r: Matrix3<f64>) -> Matrix3<f64> {
    let drift = (r.transpose() * r - Matrix3::identity()).abs().max();
    if drift <= 1e-9 {
        return r;
    }
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Rectified pinhole stereo camera with square pixels and no distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub cu: f64,
    pub cv: f64,
    pub baseline: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        f: f64,
        cu: f64,
        cv: f64,
        baseline: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(f > 0.0) {
            return Err(Error::InvalidIntrinsics(format!("focal length {f} must be > 0")));
        }
        if !(baseline > 0.0) {
            return Err(Error::InvalidIntrinsics(format!("baseline {baseline} must be > 0")));
        }
        if !(cu >= 0.0 && cu < width as f64) || !(cv >= 0.0 && cv < height as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cu}, {cv}) outside {width}x{height}"
            )));
        }
        Ok(CameraIntrinsics {
            f,
            cu,
            cv,
            baseline,
            width,
            height,
        })
    }

    /// Pinhole projection without the bounds check; `None` only at or behind the near plane.
    #[inline]
    pub fn project_unbounded(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= Z_MIN || !p.z.is_finite() {
            return None;
        }
        Some((self.f * p.x / p.z + self.cu, self.f * p.y / p.z + self.cv))
    }

    /// Projects a camera-frame point to a sub-pixel location inside the image.
    ///
    /// Pixel centers sit at integer coordinates, so the valid range is
    /// `[-0.5, width - 0.5)` horizontally.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let (u, v) = self.project_unbounded(p)?;
        self.pixel_of(u, v).map(|_| (u, v))
    }

    /// Integer pixel containing the sub-pixel location, if inside the image.
    #[inline]
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let (ui, vi) = ((u + 0.5).floor(), (v + 0.5).floor());
        if ui >= 0.0 && vi >= 0.0 && ui < self.width as f64 && vi < self.height as f64 {
            Some((ui as usize, vi as usize))
        } else {
            None
        }
    }

    /// Back-projects a disparity sample; nonpositive disparities are rejected.
    #[inline]
    pub fn disparity_to_point(&self, u: f64, v: f64, d: f64) -> Option<Vec3> {
        if !(d > 0.0) {
            return None;
        }
        let z = self.f * self.baseline / d;
        Some(Vec3::new((u - self.cu) * z / self.f, (v - self.cv) * z / self.f, z))
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vec3,
    pub intensity: u8,
}

impl CloudPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: u8) -> Self {
        CloudPoint {
            position: Vec3::new(x, y, z),
            intensity,
        }
    }
}

/// Points with 8-bit reflectance, tagged with the frame they are expressed in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntensityCloud {
    pub frame: String,
    pub points: Vec<CloudPoint>,
}

impl IntensityCloud {
    pub fn new(frame: impl Into<String>, points: Vec<CloudPoint>) -> Self {
        IntensityCloud {
            frame: frame.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Drops points with non-finite coordinates.
    pub fn retain_finite(&mut self) {
        self.points.retain(|p| p.position.iter().all(|c| c.is_finite()));
    }
}

/// Rigidly moves every point into `frame`; intensities are untouched.
pub fn apply(t: &RigidTransform, cloud: &IntensityCloud, frame: impl Into<String>) -> IntensityCloud {
    IntensityCloud {
        frame: frame.into(),
        points: cloud
            .points
            .iter()
            .map(|p| CloudPoint {
                position: t.transform_point(&p.position),
                intensity: p.intensity,
            })
            .collect(),
    }
}
