use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFitParams {
    /// Inlier distance (τ_plane) in meters.
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub min_points: usize,
    pub min_inlier_ratio: f64,
}

impl Default for PlaneFitParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.05,
            iterations: 200,
            min_points: 50,
            min_inlier_ratio: 0.3,
        }
    }
}

/// `{x : <normal, x> = offset}` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: Vec3,
    pub offset: f64,
}

impl GroundPlane {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// Signed height of `p` above the plane.
    #[inline]
    pub fn height(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Deterministic in-plane frame: origin is the world origin's projection,
    /// first axis is world x (or y, for near-vertical x) projected onto the plane.
    pub fn frame(&self) -> PlaneFrame {
        let n = self.normal;
        let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = (seed - n * n.dot(&seed)).normalize();
        let e2 = n.cross(&e1);
        PlaneFrame {
            origin: n * self.offset,
            e1,
            e2,
            normal: n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub normal: Vec3,
}

impl PlaneFrame {
    /// `(a, b, height)` coordinates of a world point.
    #[inline]
    pub fn to_local(&self, p: &Vec3) -> (f64, f64, f64) {
        let d = p - self.origin;
        (self.e1.dot(&d), self.e2.dot(&d), self.normal.dot(&d))
    }

    #[inline]
    pub fn to_world(&self, a: f64, b: f64) -> Vec3 {
        self.origin + self.e1 * a + self.e2 * b
    }
}

fn least_squares_plane(points: &[Vec3]) -> Option<GroundPlane> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let normal = eig.eigenvectors.column(k).into_owned().try_normalize(1e-12)?;
    Some(GroundPlane::new(normal, normal.dot(&mean)))
}

/// RANSAC plane refined by least squares on its inliers, normal oriented toward `viewpoint`.
pub fn fit_ground_plane(points: &[Vec3], viewpoint: &Vec3, params: &PlaneFitParams, seed: u64) -> Result<GroundPlane> {
    if points.len() < params.min_points.max(3) {
        return Err(Error::TooFewPoints {
            got: points.len(),
            min: params.min_points.max(3),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count_inliers = |plane: &GroundPlane| {
        points
            .iter()
            .filter(|p| plane.height(p).abs() <= params.inlier_threshold)
            .count()
    };
    let mut best: Option<(usize, GroundPlane)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..points.len());
        let j = rng.random_range(0..points.len());
        let k = rng.random_range(0..points.len());
        let (a, b, c) = (points[i], points[j], points[k]);
        let Some(normal) = (b - a).cross(&(c - a)).try_normalize(1e-12) else {
            continue;
        };
        let plane = GroundPlane::new(normal, normal.dot(&a));
        let n = count_inliers(&plane);
        if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
            best = Some((n, plane));
        }
    }
    let (_, candidate) = best.ok_or_else(|| Error::Degenerate("no non-degenerate sample".into()))?;
    let inliers: Vec<Vec3> = points
        .iter()
        .filter(|p| candidate.height(p).abs() <= params.inlier_threshold)
        .copied()
        .collect();
    let mut plane = least_squares_plane(&inliers).unwrap_or(candidate);
    let ratio = count_inliers(&plane) as f64 / points.len() as f64;
    if ratio < params.min_inlier_ratio {
        return Err(Error::UnreliableGround(ratio));
    }
    if plane.height(viewpoint) < 0.0 {
        plane = GroundPlane::new(-plane.normal, -plane.offset);
    }
    Ok(plane)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, z: f64) -> Vec<Vec3> {
        (0..n * n)
            .map(|i| Vec3::new((i % n) as f64 * 0.1, (i / n) as f64 * 0.1, z))
            .collect()
    }

    #[test]
    fn exact_floor() {
        let pts = grid(20, 0.0);
        let p = fit_ground_plane(&pts, &Vec3::new(1.0, 1.0, 1.5), &PlaneFitParams::default(), 1).unwrap();
        assert!((p.normal - Vec3::z()).norm() < 1e-9);
        assert!(p.offset.abs() < 1e-9);
    }

    #[test]
    fn normal_faces_viewpoint() {
        let pts = grid(20, 0.0);
        let p = fit_ground_plane(&pts, &Vec3::new(1.0, 1.0, -2.0), &PlaneFitParams::default(), 1).unwrap();
        assert!((p.normal + Vec3::z()).norm() < 1e-9);
    }

    #[test]
    fn outliers_do_not_move_plane() {
        let mut pts = grid(30, 0.0);
        let n_out = pts.len() / 10;
        for i in 0..n_out {
            pts.push(Vec3::new((i % 30) as f64 * 0.1, 0.5, 2.0));
        }
        let p = fit_ground_plane(&pts, &Vec3::new(1.0, 1.0, 1.5), &PlaneFitParams::default(), 9).unwrap();
        assert!((p.normal - Vec3::z()).norm() < 1e-3);
        assert!(p.offset.abs() < 1e-3);
    }

    #[test]
    fn too_few_and_unreliable() {
        let pts = grid(3, 0.0)[..9].to_vec();
        assert!(matches!(
            fit_ground_plane(&pts, &Vec3::z(), &PlaneFitParams::default(), 0),
            Err(Error::TooFewPoints { .. })
        ));
        // scattered cloud: no plane holds 30% of the points
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud: Vec<Vec3> = (0..400)
            .map(|_| Vec3::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)))
            .collect();
        assert!(matches!(
            fit_ground_plane(&cloud, &Vec3::z(), &PlaneFitParams::default(), 0),
            Err(Error::UnreliableGround(_))
        ));
    }

    #[test]
    fn frame_is_orthonormal() {
        let p = GroundPlane::new(Vec3::new(0.1, -0.2, 1.0).normalize(), 0.3);
        let f = p.frame();
        assert!(f.e1.dot(&f.e2).abs() < 1e-12 && f.e1.dot(&f.normal).abs() < 1e-12);
        let w = f.to_world(0.7, -1.2);
        let (a, b, h) = f.to_local(&w);
        assert!((a - 0.7).abs() < 1e-12 && (b + 1.2).abs() < 1e-12 && h.abs() < 1e-12);
        assert!(p.height(&w).abs() < 1e-12);
    }
}
