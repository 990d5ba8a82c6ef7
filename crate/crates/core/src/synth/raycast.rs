//! Box and floor-polygon ray casting.

use crate::geometry::{Intrinsics, Mat3, RigidTransform, Vec3};

const T_MIN: f64 = 1e-9;

/// What a pixel's ray hits first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hit {
    Miss,
    Floor(usize),
    Box(usize),
}

/// Horizontal polygon at height `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloorPolygon {
    pub z: f64,
    pub vertices: Vec<[f64; 2]>,
}

impl FloorPolygon {
    /// Even-odd point-in-polygon test on the xy projection.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        if dir.z.abs() < 1e-15 {
            return None;
        }
        let t = (self.z - origin.z) / dir.z;
        if t <= T_MIN {
            return None;
        }
        let p = origin + dir * t;
        self.contains_xy(p.x, p.y).then_some(t)
    }
}

/// Solid box rotated about the world z axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SolidBox {
    pub center: Vec3,
    pub rotation: Mat3,
    pub half_extents: Vec3,
}

impl SolidBox {
    pub fn new(center: Vec3, half_extents: Vec3, yaw_rad: f64) -> Self {
        let (s, c) = yaw_rad.sin_cos();
        let rotation = Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self {
            center,
            rotation,
            half_extents,
        }
    }

    /// Entry parameter of the ray, if it enters the box ahead of the origin.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let o = self.rotation.transpose() * (origin - self.center);
        let d = self.rotation.transpose() * dir;
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let h = self.half_extents[k];
            if d[k].abs() < 1e-15 {
                if o[k].abs() > h {
                    return None;
                }
                continue;
            }
            let a = (-h - o[k]) / d[k];
            let b = (h - o[k]) / d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > T_MIN).then_some(t0)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vec3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.center + self.rotation * s.component_mul(&self.half_extents);
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Geometry {
    pub floors: Vec<FloorPolygon>,
    pub boxes: Vec<SolidBox>,
}

/// Per-pixel depth and hit for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pub depth: Vec<f64>,
    pub hits: Vec<Hit>,
    /// Floor polygon under each hit point, if any.
    pub regions: Vec<Option<usize>>,
}

impl Geometry {
    pub fn floor_under(&self, p: &Vec3) -> Option<usize> {
        self.floors.iter().position(|f| f.contains_xy(p.x, p.y))
    }

    /// Nearest hit along `origin + t·dir`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> (Hit, f64) {
        let mut best = (Hit::Miss, f64::INFINITY);
        for (i, f) in self.floors.iter().enumerate() {
            if let Some(t) = f.intersect(origin, dir) {
                if t < best.1 {
                    best = (Hit::Floor(i), t);
                }
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some(t) = b.intersect(origin, dir) {
                if t < best.1 {
                    best = (Hit::Box(i), t);
                }
            }
        }
        best
    }

    /// Renders z-depth through pixel centers; misses get depth 0.
    pub fn render(&self, pose: &RigidTransform, intrinsics: &Intrinsics, height: usize, width: usize) -> Rendering {
        let origin = pose.translation();
        let r = pose.rotation();
        let mut depth = Vec::with_capacity(height * width);
        let mut hits = Vec::with_capacity(height * width);
        let mut regions = Vec::with_capacity(height * width);
        for v in 0..height {
            for u in 0..width {
                // Camera ray with unit z, so the ray parameter is the z-depth.
                let dir = r * intrinsics.unproject(u as f64, v as f64, 1.0);
                let (hit, t) = self.cast(&origin, &dir);
                hits.push(hit);
                regions.push(match hit {
                    Hit::Miss => None,
                    Hit::Floor(i) => Some(i),
                    Hit::Box(_) => self.floor_under(&(origin + dir * t)),
                });
                depth.push(if hit == Hit::Miss { 0.0 } else { t });
            }
        }
        Rendering { depth, hits, regions }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::look_at;

    #[test]
    fn polygon_containment() {
        let sq = FloorPolygon {
            z: 0.0,
            vertices: vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]],
        };
        assert!(sq.contains_xy(1.0, 1.0));
        assert!(!sq.contains_xy(3.0, 1.0));
        let l_shape = FloorPolygon {
            z: 0.0,
            vertices: vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]],
        };
        assert!(l_shape.contains_xy(0.5, 1.5));
        assert!(!l_shape.contains_xy(1.5, 1.5));
    }

    #[test]
    fn box_entry_distance() {
        let b = SolidBox::new(Vec3::new(5.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0), 0.3);
        let t = b.intersect(&Vec3::zeros(), &Vec3::x()).unwrap();
        // Face normal rotated by yaw 0.3: entry where the rotated slab begins.
        let expected = 5.0 - 1.0 / 0.3f64.cos();
        assert!((t - expected).abs() < 1e-12);
        assert!(b.intersect(&Vec3::zeros(), &(-Vec3::x())).is_none());
        assert!(b.intersect(&Vec3::new(5.0, 0.0, 0.0), &Vec3::x()).is_none());
    }

    #[test]
    fn box_occludes_floor() {
        let g = Geometry {
            floors: vec![FloorPolygon {
                z: 0.0,
                vertices: vec![[-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]],
            }],
            boxes: vec![SolidBox::new(Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.5, 0.5, 0.5), 0.0)],
        };
        let (hit, t) = g.cast(&Vec3::new(0.0, 0.0, 3.0), &-Vec3::z());
        assert_eq!(hit, Hit::Box(0));
        assert!((t - 2.0).abs() < 1e-12);
        let (hit, t) = g.cast(&Vec3::new(2.0, 0.0, 3.0), &-Vec3::z());
        assert_eq!(hit, Hit::Floor(0));
        assert!((t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rendered_floor_depth_matches_ray_plane_distance() {
        let g = Geometry {
            floors: vec![FloorPolygon {
                z: 0.0,
                vertices: vec![[-50.0, -50.0], [50.0, -50.0], [50.0, 50.0], [-50.0, 50.0]],
            }],
            boxes: vec![],
        };
        let pose = look_at(Vec3::new(0.0, 0.0, 1.5), Vec3::new(2.0, 1.0, 0.0)).unwrap();
        let k = Intrinsics::from_fov(16, 12, 1.2);
        let r = g.render(&pose, &k, 12, 16);
        for v in 0..12 {
            for u in 0..16 {
                let i = v * 16 + u;
                if r.hits[i] == Hit::Miss {
                    continue;
                }
                let p = pose.transform_point(&k.unproject(u as f64, v as f64, r.depth[i]));
                assert!(p.z.abs() < 1e-9);
            }
        }
    }
}
