//! Places layer: per-submap ground tiles merged into one deformable traversability graph.

pub mod graph;
pub mod plane;
pub mod planner;
pub mod tiles;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{voxel_downsample, RigidTransform, Vec3};
use crate::ingest::{backproject, FramePacket};

pub use graph::{GraphParams, PlacesGraph, TileNode};
pub use plane::{fit_ground_plane, GroundPlane, PlaneFitParams};
pub use planner::{plan_between, plan_path, PlannedPath};
pub use tiles::{bin_tiles, clearance_filter, quadrant_filter, TileBin};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacesParams {
    /// Tile side `n`.
    pub tile_size: f64,
    /// Clearance height `d_max`.
    pub clearance: f64,
    pub plane: PlaneFitParams,
    pub confidence_threshold: f64,
    /// Voxel size of the sparse per-submap map.
    pub map_voxel: f64,
    /// Snap radius for planning, as a multiple of the tile size.
    pub snap_tiles: f64,
}

impl Default for PlacesParams {
    fn default() -> Self {
        Self {
            tile_size: 0.35,
            clearance: 1.5,
            plane: PlaneFitParams::default(),
            confidence_threshold: crate::ingest::DEFAULT_CONFIDENCE_THRESHOLD,
            map_voxel: 0.05,
            snap_tiles: 3.0,
        }
    }
}

impl PlacesParams {
    pub fn graph_params(&self) -> GraphParams {
        GraphParams::new(self.tile_size, self.plane.inlier_threshold)
    }
}

/// A tile that survived the quadrant and clearance filters, stored in its
/// submap's local frame so pose updates can move it rigidly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceTile {
    pub tile_id: u64,
    pub submap_id: u64,
    pub local_centroid: Vec3,
    pub local_normal: Vec3,
    pub grid_index: (i64, i64),
    pub support_count: usize,
}

impl PlaceTile {
    pub fn node(&self, base: &RigidTransform) -> TileNode {
        TileNode {
            tile_id: self.tile_id,
            submap_id: self.submap_id,
            centroid: base.transform_point(&self.local_centroid),
            normal: base.transform_vector(&self.local_normal),
        }
    }
}

/// What processing one submap produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmapPlaces {
    pub submap_id: u64,
    pub plane: Option<GroundPlane>,
    /// Why no plane was fitted, if so.
    pub skipped: Option<String>,
    pub binned: usize,
    pub after_quadrant: usize,
    pub candidate_ids: Vec<u64>,
    pub accepted_ids: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlacesLayer {
    pub params: PlacesParams,
    tiles: BTreeMap<u64, PlaceTile>,
    submaps: BTreeMap<u64, SubmapPlaces>,
    /// Voxel-downsampled geometry per submap, local frame.
    sparse_map: BTreeMap<u64, Vec<Vec3>>,
    graph: PlacesGraph,
    next_tile_id: u64,
}

/// Node and edge listing for export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacesExport {
    pub nodes: Vec<ExportNode>,
    pub edges: Vec<(u64, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportNode {
    pub tile_id: u64,
    pub centroid: [f64; 3],
    pub submap_id: u64,
}

impl PlacesLayer {
    pub fn new(params: PlacesParams) -> Self {
        Self {
            params,
            tiles: BTreeMap::new(),
            submaps: BTreeMap::new(),
            sparse_map: BTreeMap::new(),
            graph: PlacesGraph::new(params.graph_params()),
            next_tile_id: 0,
        }
    }

    pub fn graph(&self) -> &PlacesGraph {
        &self.graph
    }

    /// All candidate tiles, including ones pruned from the graph.
    pub fn tiles(&self) -> impl Iterator<Item = &PlaceTile> {
        self.tiles.values()
    }

    pub fn tile(&self, id: u64) -> Option<&PlaceTile> {
        self.tiles.get(&id)
    }

    pub fn submap_summary(&self, submap_id: u64) -> Option<&SubmapPlaces> {
        self.submaps.get(&submap_id)
    }

    pub fn submap_summaries(&self) -> impl Iterator<Item = &SubmapPlaces> {
        self.submaps.values()
    }

    pub fn sparse_point_count(&self) -> usize {
        self.sparse_map.values().map(Vec::len).sum()
    }

    /// The sparse map in world coordinates, given each submap's base transform.
    pub fn sparse_map_world(&self, bases: &BTreeMap<u64, RigidTransform>) -> Vec<Vec3> {
        self.sparse_map
            .iter()
            .flat_map(|(sm, pts)| {
                let t = bases.get(sm).copied().unwrap_or_default();
                pts.iter().map(move |p| t.transform_point(p))
            })
            .collect()
    }

    /// Builds tiles for one submap from its packets (expressed in the submap's
    /// local frame) and merges them into the graph under `base`.
    ///
    /// A submap whose ground cannot be fitted contributes no tiles; the reason
    /// is kept in its summary.
    pub fn add_submap(
        &mut self,
        submap_id: u64,
        base: &RigidTransform,
        packets: &[&FramePacket],
        seed: u64,
    ) -> Result<&SubmapPlaces> {
        if self.submaps.contains_key(&submap_id) {
            return Err(Error::Batch(format!("submap {submap_id} already has places")));
        }
        let conf = self.params.confidence_threshold;
        let mut ground = Vec::new();
        let mut other = Vec::new();
        let mut viewpoint = Vec3::zeros();
        for p in packets {
            ground.extend(backproject(p, &p.ground(), conf)?.points);
            other.extend(backproject(p, &p.non_ground(), conf)?.points);
            viewpoint += p.pose.translation();
        }
        if !packets.is_empty() {
            viewpoint /= packets.len() as f64;
        }
        let mut all = ground.clone();
        all.extend_from_slice(&other);
        self.sparse_map.insert(submap_id, voxel_downsample(&all, self.params.map_voxel));

        let mut summary = SubmapPlaces {
            submap_id,
            plane: None,
            skipped: None,
            binned: 0,
            after_quadrant: 0,
            candidate_ids: Vec::new(),
            accepted_ids: Vec::new(),
        };
        let plane_seed = seed ^ submap_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        match fit_ground_plane(&ground, &viewpoint, &self.params.plane, plane_seed) {
            Ok(plane) => {
                let tau = self.params.plane.inlier_threshold;
                let n = self.params.tile_size;
                let binned = bin_tiles(&ground, &plane, n, tau);
                summary.binned = binned.len();
                let kept = quadrant_filter(binned);
                summary.after_quadrant = kept.len();
                let kept = clearance_filter(kept, &other, &plane, n, tau, self.params.clearance);
                let mut batch = Vec::with_capacity(kept.len());
                for bin in kept {
                    let tile = PlaceTile {
                        tile_id: self.next_tile_id,
                        submap_id,
                        local_centroid: bin.centroid,
                        local_normal: plane.normal,
                        grid_index: bin.grid_index,
                        support_count: bin.support_count,
                    };
                    self.next_tile_id += 1;
                    batch.push(tile.node(base));
                    summary.candidate_ids.push(tile.tile_id);
                    self.tiles.insert(tile.tile_id, tile);
                }
                summary.accepted_ids = self.graph.merge_tiles(&batch);
                summary.plane = Some(plane);
            }
            Err(e @ (Error::TooFewPoints { .. } | Error::UnreliableGround(_) | Error::Degenerate(_))) => {
                summary.skipped = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        self.submaps.insert(submap_id, summary);
        Ok(&self.submaps[&submap_id])
    }

    /// Re-runs the merge from scratch over every candidate tile moved by its
    /// submap's current base transform, one batch per submap in id order.
    pub fn rebuild(&mut self, bases: &BTreeMap<u64, RigidTransform>) {
        self.graph.clear();
        for (submap_id, summary) in &mut self.submaps {
            let base = bases.get(submap_id).copied().unwrap_or_default();
            let batch: Vec<TileNode> = summary
                .candidate_ids
                .iter()
                .map(|id| self.tiles[id].node(&base))
                .collect();
            summary.accepted_ids = self.graph.merge_tiles(&batch);
        }
    }

    /// World position of any candidate tile.
    pub fn world_centroid(&self, tile_id: u64, bases: &BTreeMap<u64, RigidTransform>) -> Option<Vec3> {
        let t = self.tiles.get(&tile_id)?;
        let base = bases.get(&t.submap_id).copied().unwrap_or_default();
        Some(base.transform_point(&t.local_centroid))
    }

    pub fn plan(&self, from: &Vec3, to: &Vec3) -> Result<PlannedPath> {
        plan_path(&self.graph, from, to, self.params.snap_tiles * self.params.tile_size)
    }

    pub fn export(&self) -> PlacesExport {
        PlacesExport {
            nodes: self
                .graph
                .nodes()
                .map(|n| ExportNode {
                    tile_id: n.tile_id,
                    centroid: [n.centroid.x, n.centroid.y, n.centroid.z],
                    submap_id: n.submap_id,
                })
                .collect(),
            edges: self.graph.edges(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, Intrinsics};

    /// A camera over an infinite floor at z = 0, every pixel a ground hit.
    fn floor_packet(id: u64, eye: Vec3, target: Vec3) -> FramePacket {
        let (w, h) = (48usize, 48usize);
        let intr = Intrinsics::from_fov(w, h, 1.4);
        let pose = look_at(eye, target).unwrap();
        let mut depth = vec![0f32; w * h];
        let mut conf = vec![0f32; w * h];
        let mut ground = vec![0u8; w * h];
        for v in 0..h {
            for u in 0..w {
                let dir = pose.transform_vector(&intr.unproject(u as f64, v as f64, 1.0));
                if dir.z < -1e-9 {
                    let t = -eye.z / dir.z;
                    let i = v * w + u;
                    depth[i] = t as f32;
                    conf[i] = 1.0;
                    ground[i] = 1;
                }
            }
        }
        FramePacket {
            keyframe_id: id,
            timestamp: id as f64,
            pose,
            intrinsics: intr,
            height: h,
            width: w,
            depth,
            depth_confidence: conf,
            ground_mask: ground,
            embedding: vec![1.0, 0.0],
        }
    }

    #[test]
    fn floor_submap_yields_connected_tiles() {
        let p = floor_packet(0, Vec3::new(0.0, 0.0, 1.5), Vec3::new(2.0, 0.0, 0.0));
        let mut layer = PlacesLayer::new(PlacesParams::default());
        let s = layer.add_submap(0, &RigidTransform::identity(), &[&p], 0).unwrap();
        assert!(s.plane.is_some());
        assert!(!s.accepted_ids.is_empty());
        let g = layer.graph();
        for (a, b) in g.edges() {
            assert!(g.edge_length(a, b) <= 1.5 * 0.35 + 1e-9);
        }
        for n in g.nodes() {
            assert!(n.centroid.z.abs() < 1e-3);
        }
    }

    #[test]
    fn second_view_of_same_floor_adds_little() {
        let p0 = floor_packet(0, Vec3::new(0.0, 0.0, 1.5), Vec3::new(2.0, 0.0, 0.0));
        let p1 = floor_packet(1, Vec3::new(0.05, 0.0, 1.5), Vec3::new(2.05, 0.0, 0.0));
        let mut layer = PlacesLayer::new(PlacesParams::default());
        let first = layer.add_submap(0, &RigidTransform::identity(), &[&p0], 0).unwrap().accepted_ids.len();
        let second = layer.add_submap(1, &RigidTransform::identity(), &[&p1], 0).unwrap();
        assert!(second.accepted_ids.len() * 4 < first, "{} vs {}", second.accepted_ids.len(), first);
    }

    #[test]
    fn identity_rebuild_is_a_no_op() {
        let p0 = floor_packet(0, Vec3::new(0.0, 0.0, 1.5), Vec3::new(2.0, 0.0, 0.0));
        let p1 = floor_packet(1, Vec3::new(2.0, 1.0, 1.5), Vec3::new(4.0, 2.0, 0.0));
        let mut layer = PlacesLayer::new(PlacesParams::default());
        let id = RigidTransform::identity();
        layer.add_submap(0, &id, &[&p0], 0).unwrap();
        layer.add_submap(1, &id, &[&p1], 0).unwrap();
        let before = layer.export();
        layer.rebuild(&BTreeMap::new());
        assert_eq!(layer.export(), before);
    }

    #[test]
    fn no_ground_is_skipped_not_fatal() {
        let mut p = floor_packet(0, Vec3::new(0.0, 0.0, 1.5), Vec3::new(2.0, 0.0, 0.0));
        p.ground_mask.iter_mut().for_each(|m| *m = 0);
        let mut layer = PlacesLayer::new(PlacesParams::default());
        let s = layer.add_submap(0, &RigidTransform::identity(), &[&p], 0).unwrap();
        assert!(s.skipped.is_some());
        assert!(layer.graph().is_empty());
        assert!(matches!(layer.plan(&Vec3::zeros(), &Vec3::zeros()), Err(Error::NoPlaces)));
    }
}
