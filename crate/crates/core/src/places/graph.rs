//! The deformable places graph: overlap pruning and proximity edges.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// Tile side `n` in meters.
    pub tile_size: f64,
    /// New tiles closer than this to an existing node are dropped.
    pub prune_radius: f64,
    /// Edges connect nodes up to this distance apart.
    pub edge_radius: f64,
    /// Maximum height difference across an edge.
    pub edge_height_tolerance: f64,
}

impl GraphParams {
    pub fn new(tile_size: f64, plane_inlier_threshold: f64) -> Self {
        Self {
            tile_size,
            prune_radius: 0.5 * tile_size,
            edge_radius: 1.5 * tile_size,
            edge_height_tolerance: 2.0 * plane_inlier_threshold,
        }
    }
}

/// A tile offered to the graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileNode {
    pub tile_id: u64,
    pub submap_id: u64,
    pub centroid: Vec3,
    /// Ground normal of the tile's plane.
    pub normal: Vec3,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlacesGraph {
    pub params: GraphParams,
    nodes: BTreeMap<u64, TileNode>,
    adjacency: BTreeMap<u64, BTreeSet<u64>>,
    #[serde(skip)]
    grid: BTreeMap<(i64, i64, i64), Vec<u64>>,
}

impl PlacesGraph {
    pub fn new(params: GraphParams) -> Self {
        Self {
            params,
            nodes: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            grid: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: u64) -> Option<&TileNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TileNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> Vec<u64> {
        self.nodes.keys().copied().collect()
    }

    pub fn neighbors(&self, id: u64) -> impl Iterator<Item = u64> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn degree(&self, id: u64) -> usize {
        self.adjacency.get(&id).map_or(0, BTreeSet::len)
    }

    /// Undirected edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(u64, u64)> {
        self.adjacency
            .iter()
            .flat_map(|(&a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    pub fn edge_length(&self, a: u64, b: u64) -> f64 {
        (self.nodes[&a].centroid - self.nodes[&b].centroid).norm()
    }

    fn cell_of(&self, p: &Vec3) -> (i64, i64, i64) {
        let s = self.params.edge_radius.max(self.params.prune_radius);
        ((p.x / s).floor() as i64, (p.y / s).floor() as i64, (p.z / s).floor() as i64)
    }

    fn rebuild_grid(&mut self) {
        let mut grid: BTreeMap<(i64, i64, i64), Vec<u64>> = BTreeMap::new();
        for n in self.nodes.values() {
            grid.entry(self.cell_of(&n.centroid)).or_default().push(n.tile_id);
        }
        self.grid = grid;
    }

    /// Node ids within one grid cell of `p` in every direction, ascending.
    fn nearby(&self, p: &Vec3) -> Vec<u64> {
        let (ci, cj, ck) = self.cell_of(p);
        let mut out = Vec::new();
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    if let Some(ids) = self.grid.get(&(ci + di, cj + dj, ck + dk)) {
                        out.extend_from_slice(ids);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Edge rule: centroid distance within the edge radius and compatible ground height.
    pub fn connects(&self, a: &TileNode, b: &TileNode) -> bool {
        let d = b.centroid - a.centroid;
        if d.norm() > self.params.edge_radius {
            return false;
        }
        let dh = a.normal.dot(&d).abs().max(b.normal.dot(&d).abs());
        dh <= self.params.edge_height_tolerance
    }

    /// Merges one batch of tiles. A tile within the prune radius of a node that
    /// existed before this batch is dropped; survivors become nodes and are
    /// connected to every node satisfying the edge rule. Returns accepted ids.
    pub fn merge_tiles(&mut self, new_tiles: &[TileNode]) -> Vec<u64> {
        if self.grid.is_empty() && !self.nodes.is_empty() {
            self.rebuild_grid();
        }
        let r_prune = self.params.prune_radius;
        let accepted: Vec<TileNode> = new_tiles
            .iter()
            .filter(|t| {
                !self
                    .nearby(&t.centroid)
                    .iter()
                    .any(|id| (self.nodes[id].centroid - t.centroid).norm() <= r_prune)
            })
            .copied()
            .collect();
        for t in &accepted {
            self.nodes.insert(t.tile_id, *t);
            self.adjacency.entry(t.tile_id).or_default();
            let cell = self.cell_of(&t.centroid);
            self.grid.entry(cell).or_default().push(t.tile_id);
        }
        for t in &accepted {
            for other in self.nearby(&t.centroid) {
                if other == t.tile_id {
                    continue;
                }
                if self.connects(t, &self.nodes[&other]) {
                    self.adjacency.entry(t.tile_id).or_default().insert(other);
                    self.adjacency.entry(other).or_default().insert(t.tile_id);
                }
            }
        }
        accepted.iter().map(|t| t.tile_id).collect()
    }

    /// Drops all nodes and edges, keeping the parameters.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.adjacency.clear();
        self.grid.clear();
    }

    pub fn nearest_node(&self, p: &Vec3) -> Option<(u64, f64)> {
        self.nodes
            .values()
            .map(|n| (n.tile_id, (n.centroid - p).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: u64, x: f64, y: f64) -> TileNode {
        TileNode {
            tile_id: id,
            submap_id: 0,
            centroid: Vec3::new(x, y, 0.0),
            normal: Vec3::z(),
        }
    }

    fn graph(n: f64) -> PlacesGraph {
        PlacesGraph::new(GraphParams::new(n, 0.05))
    }

    #[test]
    fn adjacent_and_diagonal_edges() {
        let n = 0.35;
        let mut g = graph(n);
        g.merge_tiles(&[node(0, 0.0, 0.0), node(1, n, 0.0), node(2, n, n), node(3, 3.0 * n, 0.0)]);
        let e = g.edges();
        assert!(e.contains(&(0, 1)));
        assert!(e.contains(&(0, 2)), "diagonal at n·√2 ≤ 1.5n");
        assert!(!e.contains(&(0, 3)));
    }

    #[test]
    fn overlap_pruned_existing_wins() {
        let n = 1.0;
        let mut g = graph(n);
        g.merge_tiles(&[node(0, 0.0, 0.0)]);
        let accepted = g.merge_tiles(&[node(1, 0.3, 0.0), node(2, 0.6, 0.0)]);
        assert_eq!(accepted, vec![2]);
        assert!(g.node(0).is_some() && g.node(1).is_none());
    }

    #[test]
    fn stacked_floors_do_not_connect() {
        let mut g = graph(0.35);
        let mut upper = node(1, 0.35, 0.0);
        upper.centroid.z = 0.3;
        g.merge_tiles(&[node(0, 0.0, 0.0), upper]);
        assert!(g.edges().is_empty());
    }

    proptest::proptest! {
        #[test]
        fn edges_short_and_nodes_spread(
            batches in proptest::collection::vec(
                ((0.0..0.35f64, 0.0..0.35f64), proptest::collection::btree_set((0i32..10, 0i32..10), 1..40)),
                1..4,
            ),
        ) {
            // Each batch is a lattice of spacing n, like one submap's tiles.
            let n = 0.35;
            let mut g = graph(n);
            let mut next_id = 0;
            for ((ox, oy), cells) in batches {
                let tiles: Vec<TileNode> = cells
                    .iter()
                    .map(|&(i, j)| {
                        next_id += 1;
                        node(next_id, ox + i as f64 * n, oy + j as f64 * n)
                    })
                    .collect();
                g.merge_tiles(&tiles);
            }
            for (a, b) in g.edges() {
                proptest::prop_assert!(g.edge_length(a, b) <= 1.5 * n + 1e-12);
            }
            let nodes: Vec<&TileNode> = g.nodes().collect();
            for (i, a) in nodes.iter().enumerate() {
                for b in &nodes[i + 1..] {
                    proptest::prop_assert!((a.centroid - b.centroid).norm() > 0.5 * n);
                }
            }
        }
    }
}
