//! Ground-point binning into square tiles and the quadrant / clearance filters.

use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::Vec3;

use super::plane::GroundPlane;

/// One occupied tile of the plane grid. Tile `(i, j)` covers
/// `[i·n, (i+1)·n) × [j·n, (j+1)·n)` in the plane frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TileBin {
    pub grid_index: (i64, i64),
    /// Center of the tile square, on the plane.
    pub centroid: Vec3,
    pub support_count: usize,
    /// Point counts per quadrant, indexed `qa + 2·qb` where `qa`/`qb` are 1 for the upper half.
    pub quadrant_counts: [u32; 4],
}

#[inline]
fn cell(a: f64, b: f64, n: f64) -> ((i64, i64), usize) {
    let (fi, fj) = ((a / n).floor(), (b / n).floor());
    let (ra, rb) = (a - fi * n, b - fj * n);
    let q = (ra >= n / 2.0) as usize + 2 * (rb >= n / 2.0) as usize;
    ((fi as i64, fj as i64), q)
}

/// Bins points within `inlier_threshold` of the plane; others are ignored.
/// Output is sorted by grid index.
pub fn bin_tiles(points: &[Vec3], plane: &GroundPlane, tile_size: f64, inlier_threshold: f64) -> Vec<TileBin> {
    let frame = plane.frame();
    let mut bins: BTreeMap<(i64, i64), (usize, [u32; 4])> = BTreeMap::new();
    for p in points {
        let (a, b, h) = frame.to_local(p);
        if h.abs() > inlier_threshold {
            continue;
        }
        let (idx, q) = cell(a, b, tile_size);
        let e = bins.entry(idx).or_insert((0, [0; 4]));
        e.0 += 1;
        e.1[q] += 1;
    }
    bins.into_iter()
        .map(|((i, j), (support_count, quadrant_counts))| TileBin {
            grid_index: (i, j),
            centroid: frame.to_world((i as f64 + 0.5) * tile_size, (j as f64 + 0.5) * tile_size),
            support_count,
            quadrant_counts,
        })
        .collect()
}

/// Keeps tiles with at least one point in every quadrant.
pub fn quadrant_filter(tiles: Vec<TileBin>) -> Vec<TileBin> {
    tiles
        .into_iter()
        .filter(|t| t.quadrant_counts.iter().all(|&c| c >= 1))
        .collect()
}

/// Removes tiles that have a scene point above them at height in `(inlier_threshold, d_max]`.
pub fn clearance_filter(
    tiles: Vec<TileBin>,
    scene_points: &[Vec3],
    plane: &GroundPlane,
    tile_size: f64,
    inlier_threshold: f64,
    d_max: f64,
) -> Vec<TileBin> {
    let frame = plane.frame();
    let mut blocked = BTreeSet::new();
    for p in scene_points {
        let (a, b, h) = frame.to_local(p);
        if h > inlier_threshold && h <= d_max {
            blocked.insert(cell(a, b, tile_size).0);
        }
    }
    tiles
        .into_iter()
        .filter(|t| !blocked.contains(&t.grid_index))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn floor() -> GroundPlane {
        GroundPlane::new(Vec3::z(), 0.0)
    }

    #[test]
    fn four_corner_points_one_tile() {
        let pts = [(0.1, 0.1), (0.9, 0.1), (0.1, 0.9), (0.9, 0.9)].map(|(x, y)| Vec3::new(x, y, 0.0));
        let tiles = bin_tiles(&pts, &floor(), 1.0, 0.05);
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].grid_index, (0, 0));
        assert_eq!(tiles[0].support_count, 4);
        assert_eq!(tiles[0].quadrant_counts, [1, 1, 1, 1]);
        assert!((tiles[0].centroid - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn off_plane_points_ignored() {
        let pts = vec![Vec3::new(0.2, 0.2, 0.5), Vec3::new(0.3, 0.3, -0.2)];
        assert!(bin_tiles(&pts, &floor(), 1.0, 0.05).is_empty());
    }

    #[test]
    fn binning_matches_floor_division_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-0.1..0.1)))
            .collect();
        let n = 0.35;
        let tiles = bin_tiles(&pts, &floor(), n, 0.05);
        let mut oracle: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for p in &pts {
            if p.z.abs() <= 0.05 {
                *oracle.entry(((p.x / n).floor() as i64, (p.y / n).floor() as i64)).or_default() += 1;
            }
        }
        let got: BTreeMap<(i64, i64), usize> = tiles.iter().map(|t| (t.grid_index, t.support_count)).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn quadrant_rule() {
        let mk = |q: [u32; 4]| TileBin {
            grid_index: (0, 0),
            centroid: Vec3::zeros(),
            support_count: q.iter().sum::<u32>() as usize,
            quadrant_counts: q,
        };
        assert_eq!(quadrant_filter(vec![mk([1, 1, 1, 1])]).len(), 1);
        assert!(quadrant_filter(vec![mk([5, 5, 5, 0])]).is_empty());
    }

    #[test]
    fn quadrant_decisions_match_raw_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let pts: Vec<Vec3> = (0..rng.random_range(5..60))
                .map(|_| Vec3::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), 0.0))
                .collect();
            let kept: BTreeSet<(i64, i64)> = quadrant_filter(bin_tiles(&pts, &floor(), 1.0, 0.05))
                .iter()
                .map(|t| t.grid_index)
                .collect();
            for i in 0..2i64 {
                for j in 0..2i64 {
                    let mut quads = [false; 4];
                    for p in &pts {
                        if p.x >= i as f64 && p.x < i as f64 + 1.0 && p.y >= j as f64 && p.y < j as f64 + 1.0 {
                            let qa = (p.x - i as f64 >= 0.5) as usize;
                            let qb = (p.y - j as f64 >= 0.5) as usize;
                            quads[qa + 2 * qb] = true;
                        }
                    }
                    assert_eq!(kept.contains(&(i, j)), quads.iter().all(|&q| q));
                }
            }
        }
    }

    #[test]
    fn clearance_table_vs_ceiling() {
        let pts: Vec<Vec3> = (0..4)
            .map(|k| Vec3::new(0.1 + 0.8 * (k % 2) as f64, 0.1 + 0.8 * (k / 2) as f64, 0.0))
            .collect();
        let tiles = bin_tiles(&pts, &floor(), 1.0, 0.05);
        let table = [Vec3::new(0.5, 0.5, 0.7)];
        assert!(clearance_filter(tiles.clone(), &table, &floor(), 1.0, 0.05, 1.5).is_empty());
        let ceiling = [Vec3::new(0.5, 0.5, 2.5)];
        assert_eq!(clearance_filter(tiles, &ceiling, &floor(), 1.0, 0.05, 1.5).len(), 1);
    }

    #[test]
    fn clearance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 0.5;
        let ground: Vec<Vec3> = (0..3000)
            .map(|_| Vec3::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), 0.0))
            .collect();
        let obstacles: Vec<Vec3> = (0..40)
            .map(|_| Vec3::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..3.0)))
            .collect();
        let tiles = bin_tiles(&ground, &floor(), n, 0.05);
        let kept: BTreeSet<_> = clearance_filter(tiles.clone(), &obstacles, &floor(), n, 0.05, 1.5)
            .iter()
            .map(|t| t.grid_index)
            .collect();
        for t in &tiles {
            let (i, j) = t.grid_index;
            let x0 = i as f64 * n;
            let y0 = j as f64 * n;
            let covered = obstacles.iter().any(|p| {
                p.x >= x0 && p.x < x0 + n && p.y >= y0 && p.y < y0 + n && p.z > 0.05 && p.z <= 1.5
            });
            assert_eq!(kept.contains(&t.grid_index), !covered);
        }
    }
}
