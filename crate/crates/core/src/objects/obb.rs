//! Oriented bounding boxes: PCA fitting, mutual-centroid matching and voxel-sampled IoU.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, RigidTransform, Vec3};

pub const DEFAULT_TRIM_QUANTILE: f64 = 0.005;
pub const DEFAULT_IOU_RESOLUTION: usize = 64;
/// Floor for half-extents of planar point sets (a single view of a flat face).
pub const MIN_HALF_EXTENT: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBBox {
    pub center: Vec3,
    /// Columns are the box axes.
    pub axes: Mat3,
    pub half_extents: Vec3,
}

impl OrientedBBox {
    pub fn new(center: Vec3, axes: Mat3, half_extents: Vec3) -> Self {
        Self {
            center,
            axes,
            half_extents,
        }
    }

    pub fn axis_aligned(center: Vec3, half_extents: Vec3) -> Self {
        Self::new(center, Mat3::identity(), half_extents)
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    /// Coordinates of `p` in the box frame.
    #[inline]
    pub fn local(&self, p: &Vec3) -> Vec3 {
        self.axes.transpose() * (p - self.center)
    }

    /// Boundary-inclusive containment.
    #[inline]
    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.local(p);
        (0..3).all(|k| l[k].abs() <= self.half_extents[k])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vec3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.center + self.axes * s.component_mul(&self.half_extents);
        }
        out
    }

    pub fn transformed(&self, t: &RigidTransform) -> OrientedBBox {
        OrientedBBox {
            center: t.transform_point(&self.center),
            axes: t.rotation() * self.axes,
            half_extents: self.half_extents,
        }
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        let reach = self.axes.abs() * self.half_extents;
        (self.center - reach, self.center + reach)
    }
}

/// PCA-aligned box with per-axis quantile trimming.
///
/// Axes are covariance eigenvectors in descending eigenvalue order, made
/// right-handed. Extents come from the `q` and `1 - q` projection quantiles.
pub fn fit_oriented_bbox(points: &[Vec3], trim_quantile: f64) -> Result<OrientedBBox> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{} points", points.len())));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let scale = cov.trace();
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::Degenerate("coincident points".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if eig.eigenvalues[order[1]] <= 1e-12 * scale {
        return Err(Error::Degenerate("collinear points".into()));
    }
    let vals = order.map(|k| eig.eigenvalues[k]);
    let vecs = order.map(|k| eig.eigenvectors.column(k).into_owned());
    let tie = |a: f64, b: f64| (a - b).abs() <= 1e-9 * scale;
    let frame = match (tie(vals[0], vals[1]), tie(vals[1], vals[2])) {
        (false, false) => [vecs[0], vecs[1]],
        (true, true) => min_volume_frame(points, &mean, None).unwrap_or([vecs[0], vecs[1]]),
        (false, true) => min_volume_frame(points, &mean, Some(vecs[0])).unwrap_or([vecs[0], vecs[1]]),
        (true, false) => min_volume_frame(points, &mean, Some(vecs[2]))
            .map(|[fixed, d]| [d, d.cross(&fixed)])
            .unwrap_or([vecs[0], vecs[1]]),
    };
    let e0 = canonical_sign(frame[0]);
    let e1 = canonical_sign(frame[1]);
    let e1 = (e1 - e0 * e0.dot(&e1)).normalize();
    let e2 = e0.cross(&e1);
    let axes = Mat3::from_columns(&[e0, e1, e2]);

    let mut lo = Vec3::zeros();
    let mut hi = Vec3::zeros();
    let mut proj: Vec<f64> = Vec::with_capacity(points.len());
    for k in 0..3 {
        let axis = axes.column(k);
        proj.clear();
        proj.extend(points.iter().map(|p| axis.dot(&(p - mean))));
        proj.sort_by(f64::total_cmp);
        let last = (proj.len() - 1) as f64;
        let i_lo = (trim_quantile * last).floor() as usize;
        let i_hi = ((1.0 - trim_quantile) * last).ceil() as usize;
        lo[k] = proj[i_lo];
        hi[k] = proj[i_hi.min(proj.len() - 1)];
    }
    let mid = (lo + hi) / 2.0;
    let half = ((hi - lo) / 2.0).map(|h| h.max(MIN_HALF_EXTENT));
    Ok(OrientedBBox {
        center: mean + axes * mid,
        axes,
        half_extents: half,
    })
}

/// Number of far points whose pairwise differences seed candidate axes.
const FRAME_CANDIDATES: usize = 16;

/// Orientation for point sets whose covariance has repeated eigenvalues, where
/// PCA axes are arbitrary: tries axes along differences of far-out points and
/// keeps the frame with the smallest bounding volume. With `fixed`, the first
/// axis is kept and only the second is searched in its orthogonal plane.
fn min_volume_frame(points: &[Vec3], mean: &Vec3, fixed: Option<Vec3>) -> Option<[Vec3; 2]> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| (points[b] - mean).norm().total_cmp(&(points[a] - mean).norm()).then(a.cmp(&b)));
    idx.truncate(FRAME_CANDIDATES);
    let mut dirs = Vec::new();
    for (i, &a) in idx.iter().enumerate() {
        for &b in &idx[i + 1..] {
            let mut d = points[b] - points[a];
            if let Some(f) = fixed {
                d -= f * f.dot(&d);
            }
            if let Some(d) = d.try_normalize(1e-9) {
                dirs.push(d);
            }
        }
    }
    let volume = |e0: &Vec3, e1: &Vec3| {
        let e2 = e0.cross(e1);
        let mut v = 1.0;
        for axis in [e0, e1, &e2] {
            let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let t = axis.dot(&(p - mean));
                (lo.min(t), hi.max(t))
            });
            v *= hi - lo;
        }
        v
    };
    let mut best: Option<(f64, [Vec3; 2])> = None;
    let mut consider = |e0: Vec3, e1: Vec3| {
        let v = volume(&e0, &e1);
        if best.is_none_or(|(bv, _)| v < bv * (1.0 - 1e-12)) {
            best = Some((v, [e0, e1]));
        }
    };
    match fixed {
        Some(f) => dirs.iter().for_each(|d| consider(f, *d)),
        None => {
            for (i, a) in dirs.iter().enumerate() {
                for b in &dirs[i + 1..] {
                    if let Some(b) = (b - a * a.dot(b)).try_normalize(1e-6) {
                        consider(*a, b);
                    }
                }
            }
        }
    }
    best.map(|(_, f)| f)
}

/// Flips an eigenvector so its largest-magnitude component is positive.
fn canonical_sign(v: Vec3) -> Vec3 {
    let k = v.iamax();
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// True iff each box contains the other's center.
pub fn osr_match(estimated: &OrientedBBox, truth: &OrientedBBox) -> bool {
    estimated.contains(&truth.center) && truth.contains(&estimated.center)
}

/// Intersection over union by sampling voxel centers of the union's axis-aligned bound.
pub fn iou_3d(a: &OrientedBBox, b: &OrientedBBox) -> f64 {
    iou_3d_with_resolution(a, b, DEFAULT_IOU_RESOLUTION)
}

pub fn iou_3d_with_resolution(a: &OrientedBBox, b: &OrientedBBox, resolution: usize) -> f64 {
    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    if (0..3).any(|k| amax[k] < bmin[k] || bmax[k] < amin[k]) {
        return 0.0;
    }
    let lo = amin.inf(&bmin);
    let hi = amax.sup(&bmax);
    let step = (hi - lo) / resolution as f64;
    let (mut in_a, mut in_b, mut in_both) = (0u64, 0u64, 0u64);
    for i in 0..resolution {
        let x = lo.x + (i as f64 + 0.5) * step.x;
        for j in 0..resolution {
            let y = lo.y + (j as f64 + 0.5) * step.y;
            for k in 0..resolution {
                let p = Vec3::new(x, y, lo.z + (k as f64 + 0.5) * step.z);
                let ia = a.contains(&p);
                let ib = b.contains(&p);
                in_a += ia as u64;
                in_b += ib as u64;
                in_both += (ia && ib) as u64;
            }
        }
    }
    let union = in_a + in_b - in_both;
    if union == 0 {
        0.0
    } else {
        in_both as f64 / union as f64
    }
}
