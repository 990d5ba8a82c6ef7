//! Rigid transforms, pinhole intrinsics and point clouds.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const RIGID_TOL: f64 = 1e-5;

/// A 4x4 rigid transform (rotation + translation), stored as a homogeneous matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 16]", into = "[f64; 16]")]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_parts(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::from_matrix(m)
    }

    pub fn from_translation(t: Vec3) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self { matrix: m }
    }

    /// Rotation about a unit axis by `angle` radians, followed by `translation`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { matrix: m }
    }

    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Transform("non-finite entry".into()));
        }
        let bottom = matrix.fixed_view::<1, 4>(3, 0).transpose();
        if (bottom - Vector4::new(0.0, 0.0, 0.0, 1.0)).amax() > RIGID_TOL {
            return Err(Error::Transform("bottom row is not (0, 0, 0, 1)".into()));
        }
        let r: Mat3 = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r.transpose() * r - Mat3::identity();
        if gram.amax() > RIGID_TOL {
            return Err(Error::Transform(format!(
                "rotation block is not orthonormal (max deviation {:.3e})",
                gram.amax()
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > RIGID_TOL {
            return Err(Error::Transform(format!("rotation determinant {det:.6} != +1")));
        }
        Ok(Self { matrix })
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::Transform(format!(
                "expected 16 values, got {}",
                values.len()
            )));
        }
        Self::from_matrix(Matrix4::from_row_slice(values))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Mat3 {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation() * v
    }

    /// `self · other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            matrix: self.matrix * other.matrix,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        RigidTransform { matrix: m }
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == Matrix4::identity()
    }
}

impl TryFrom<[f64; 16]> for RigidTransform {
    type Error = Error;

    fn try_from(values: [f64; 16]) -> Result<Self> {
        Self::from_row_major(&values)
    }
}

impl From<RigidTransform> for [f64; 16] {
    fn from(t: RigidTransform) -> Self {
        t.to_row_major()
    }
}

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Square-pixel intrinsics for a horizontal field of view, principal point at the image center.
    pub fn from_fov(width: usize, height: usize, hfov_rad: f64) -> Self {
        let f = width as f64 / (2.0 * (hfov_rad / 2.0).tan());
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Camera-frame point at depth `d` (z-distance) for pixel `(u, v)`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vec3 {
        Vec3::new(d * (u - self.cx) / self.fx, d * (v - self.cy) / self.fy, d)
    }

    /// Pixel coordinates and depth of a camera-frame point. Depth may be non-positive.
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        )
    }
}

/// World-frame points, optionally tagged with the keyframe that produced each one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<u64>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self {
            points,
            sources: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_sources(&self) -> bool {
        !self.sources.is_empty() && self.sources.len() == self.points.len()
    }

    pub fn push(&mut self, p: Vec3, source: Option<u64>) {
        self.points.push(p);
        if let Some(s) = source {
            self.sources.push(s);
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        let keep_sources = (self.is_empty() || self.has_sources()) && other.has_sources();
        if !keep_sources {
            self.sources.clear();
        }
        self.points.extend_from_slice(&other.points);
        if keep_sources {
            self.sources.extend_from_slice(&other.sources);
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            sources: self.sources.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Keeps one point (the voxel centroid) per occupied voxel. Output is sorted by voxel index.
pub fn voxel_downsample(points: &[Vec3], voxel: f64) -> Vec<Vec3> {
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for p in points {
        let key = voxel_key(p, voxel);
        let entry = cells.entry(key).or_insert((Vec3::zeros(), 0));
        entry.0 += p;
        entry.1 += 1;
    }
    cells.into_values().map(|(sum, n)| sum / n as f64).collect()
}

#[inline]
pub fn voxel_key(p: &Vec3, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Camera pose looking from `eye` toward `target` with world +z as up.
/// Camera axes: x right, y down, z forward.
pub fn look_at(eye: Vec3, target: Vec3) -> Result<RigidTransform> {
    let forward = (target - eye)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Transform("eye and target coincide".into()))?;
    let up = Vec3::z();
    let right = forward
        .cross(&up)
        .try_normalize(1e-9)
        .unwrap_or_else(Vec3::x);
    let down = forward.cross(&right);
    let r = Mat3::from_columns(&[right, down, forward]);
    RigidTransform::from_parts(r, eye)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let t = RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.7, Vec3::new(4.0, -1.0, 2.0));
        let p = Vec3::new(0.3, -2.0, 5.0);
        let back = t.inverse().transform_point(&t.transform_point(&p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn rejects_scaled_rotation() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 1.1;
        assert!(RigidTransform::from_matrix(m).is_err());
        let mut refl = Matrix4::identity();
        refl[(2, 2)] = -1.0;
        assert!(RigidTransform::from_matrix(refl).is_err());
    }

    #[test]
    fn look_at_faces_target() {
        let pose = look_at(Vec3::new(0.0, 0.0, 1.0), Vec3::new(3.0, 0.0, 1.0)).unwrap();
        let cam = pose.inverse().transform_point(&Vec3::new(3.0, 0.0, 1.0));
        assert!((cam - Vec3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
        // world up is image up (negative camera y)
        let up = pose.inverse().transform_point(&Vec3::new(3.0, 0.0, 2.0));
        assert!(up.y < 0.0);
    }

    #[test]
    fn voxel_downsample_one_point_per_voxel() {
        let pts = vec![
            Vec3::new(0.01, 0.01, 0.01),
            Vec3::new(0.03, 0.01, 0.01),
            Vec3::new(0.51, 0.0, 0.0),
        ];
        let out = voxel_downsample(&pts, 0.1);
        assert_eq!(out.len(), 2);
        assert!((out[0] - Vec3::new(0.02, 0.01, 0.01)).norm() < 1e-12);
    }

    #[test]
    fn serde_roundtrip_transform() {
        let t = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
    }
}
