use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::graph::PlacesGraph;

/// Relative slack when testing whether an edge lies on a shortest path.
const TIE_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub tile_ids: Vec<u64>,
    pub cost: f64,
    pub polyline: Vec<Vec3>,
}

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    node: u64,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra over Euclidean edge lengths.
pub fn shortest_distances(graph: &PlacesGraph, source: u64) -> BTreeMap<u64, f64> {
    let mut dist: BTreeMap<u64, f64> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(source, 0.0);
    heap.push(Entry { cost: 0.0, node: source });
    while let Some(Entry { cost, node }) = heap.pop() {
        if cost > dist[&node] {
            continue;
        }
        for next in graph.neighbors(node) {
            let c = cost + graph.edge_length(node, next);
            if dist.get(&next).is_none_or(|&d| c < d) {
                dist.insert(next, c);
                heap.push(Entry { cost: c, node: next });
            }
        }
    }
    dist
}

/// Minimum-length path between the nodes nearest `start` and `goal`.
///
/// Among equal-cost paths the lexicographically smallest tile-id sequence wins:
/// distances are computed from the goal, then the walk from the start always
/// takes the smallest-id neighbor that stays on a shortest path.
pub fn plan_path(graph: &PlacesGraph, start: &Vec3, goal: &Vec3, snap_radius: f64) -> Result<PlannedPath> {
    if graph.is_empty() {
        return Err(Error::NoPlaces);
    }
    let snap = |p: &Vec3, which: &'static str| match graph.nearest_node(p) {
        Some((id, d)) if d <= snap_radius => Ok(id),
        _ => Err(Error::Snap {
            which,
            radius: snap_radius,
        }),
    };
    let s = snap(start, "start")?;
    let g = snap(goal, "goal")?;
    plan_between(graph, s, g)
}

pub fn plan_between(graph: &PlacesGraph, start: u64, goal: u64) -> Result<PlannedPath> {
    for id in [start, goal] {
        if graph.node(id).is_none() {
            return Err(Error::UnknownPlace(id));
        }
    }
    let to_goal = shortest_distances(graph, goal);
    let Some(&total) = to_goal.get(&start) else {
        return Err(Error::NoPath(start, goal));
    };
    let mut path = vec![start];
    let mut walked = 0.0;
    let mut current = start;
    while current != goal {
        let here = to_goal[&current];
        let next = graph
            .neighbors(current)
            .find(|n| {
                to_goal.get(n).is_some_and(|&d| {
                    let via = graph.edge_length(current, *n) + d;
                    d < here && via <= here + TIE_EPS * here.max(1.0)
                })
            })
            .ok_or(Error::NoPath(start, goal))?;
        walked += graph.edge_length(current, next);
        path.push(next);
        current = next;
    }
    debug_assert!((walked - total).abs() <= 1e-6 * total.max(1.0));
    let polyline = path.iter().map(|id| graph.node(*id).expect("on graph").centroid).collect();
    Ok(PlannedPath {
        tile_ids: path,
        cost: total,
        polyline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::places::graph::{GraphParams, TileNode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corridor(len: usize, n: f64) -> PlacesGraph {
        let mut g = PlacesGraph::new(GraphParams::new(n, 0.05));
        let tiles: Vec<TileNode> = (0..len)
            .map(|i| TileNode {
                tile_id: i as u64,
                submap_id: 0,
                centroid: Vec3::new(i as f64 * n, 0.0, 0.0),
                normal: Vec3::z(),
            })
            .collect();
        g.merge_tiles(&tiles);
        g
    }

    #[test]
    fn same_tile_path() {
        let g = corridor(3, 0.35);
        let p = plan_path(&g, &Vec3::new(0.01, 0.0, 0.0), &Vec3::new(0.0, 0.02, 0.0), 1.0).unwrap();
        assert_eq!(p.tile_ids, vec![0]);
        assert_eq!(p.cost, 0.0);
    }

    #[test]
    fn corridor_chain() {
        let n = 0.35;
        let g = corridor(10, n);
        let p = plan_path(&g, &Vec3::zeros(), &Vec3::new(9.0 * n, 0.0, 0.0), 3.0 * n).unwrap();
        assert_eq!(p.tile_ids, (0..10).collect::<Vec<u64>>());
        assert!((p.cost - 9.0 * n).abs() < 1e-9);
    }

    #[test]
    fn snap_and_disconnected_errors() {
        let n = 0.35;
        let mut g = corridor(3, n);
        assert!(matches!(
            plan_path(&g, &Vec3::new(50.0, 0.0, 0.0), &Vec3::zeros(), 3.0 * n),
            Err(Error::Snap { which: "start", .. })
        ));
        g.merge_tiles(&[TileNode {
            tile_id: 10,
            submap_id: 1,
            centroid: Vec3::new(5.0, 0.0, 0.0),
            normal: Vec3::z(),
        }]);
        assert!(matches!(
            plan_path(&g, &Vec3::zeros(), &Vec3::new(5.0, 0.0, 0.0), 3.0 * n),
            Err(Error::NoPath(0, 10))
        ));
    }

    #[test]
    fn grid_ties_take_smallest_ids() {
        // 2x2 block: 0 (0,0) 1 (1,0) 2 (0,1) 3 (1,1), plus diagonal edges
        let mut g = PlacesGraph::new(GraphParams {
            tile_size: 1.0,
            prune_radius: 0.5,
            edge_radius: 1.0,
            edge_height_tolerance: 0.1,
        });
        let tiles: Vec<TileNode> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (1.0, 2.0), (2.0, 2.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| TileNode {
                tile_id: i as u64,
                submap_id: 0,
                centroid: Vec3::new(x, y, 0.0),
                normal: Vec3::z(),
            })
            .collect();
        g.merge_tiles(&tiles);
        let p = plan_between(&g, 0, 6).unwrap();
        assert_eq!(p.tile_ids, vec![0, 1, 3, 4, 6]);
    }

    /// Bellman-Ford over the edge list.
    fn bellman_ford(g: &PlacesGraph, source: u64) -> BTreeMap<u64, f64> {
        let mut dist: BTreeMap<u64, f64> = g.node_ids().into_iter().map(|i| (i, f64::INFINITY)).collect();
        dist.insert(source, 0.0);
        let edges = g.edges();
        for _ in 0..g.len() {
            let mut changed = false;
            for &(a, b) in &edges {
                let w = (g.node(a).unwrap().centroid - g.node(b).unwrap().centroid).norm();
                for (u, v) in [(a, b), (b, a)] {
                    if dist[&u] + w < dist[&v] {
                        dist.insert(v, dist[&u] + w);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist
    }

    fn random_graph(rng: &mut ChaCha8Rng, count: usize, extent: f64) -> PlacesGraph {
        let mut g = PlacesGraph::new(GraphParams::new(0.35, 0.05));
        let tiles: Vec<TileNode> = (0..count)
            .map(|i| TileNode {
                tile_id: i as u64,
                submap_id: 0,
                centroid: Vec3::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent), 0.0),
                normal: Vec3::z(),
            })
            .collect();
        for t in tiles {
            g.merge_tiles(&[t]);
        }
        g
    }

    #[test]
    fn random_graph_costs_match_bellman_ford() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = random_graph(&mut rng, 200, 4.0);
        let ids = g.node_ids();
        for _ in 0..30 {
            let s = ids[rng.random_range(0..ids.len())];
            let t = ids[rng.random_range(0..ids.len())];
            let bf = bellman_ford(&g, s);
            match plan_between(&g, s, t) {
                Ok(p) => {
                    assert!((p.cost - bf[&t]).abs() <= 1e-9, "{} vs {}", p.cost, bf[&t]);
                    assert_eq!(p.tile_ids.first(), Some(&s));
                    assert_eq!(p.tile_ids.last(), Some(&t));
                }
                Err(Error::NoPath(..)) => assert!(bf[&t].is_infinite()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    /// Exhaustive simple-path enumeration.
    fn enumerate_best(g: &PlacesGraph, s: u64, t: u64) -> Option<f64> {
        fn dfs(g: &PlacesGraph, u: u64, t: u64, seen: &mut Vec<u64>, acc: f64, best: &mut Option<f64>) {
            if u == t {
                if best.is_none_or(|b| acc < b) {
                    *best = Some(acc);
                }
                return;
            }
            for v in g.neighbors(u).collect::<Vec<_>>() {
                if !seen.contains(&v) {
                    seen.push(v);
                    dfs(g, v, t, seen, acc + g.edge_length(u, v), best);
                    seen.pop();
                }
            }
        }
        let mut best = None;
        dfs(g, s, t, &mut vec![s], 0.0, &mut best);
        best
    }

    #[test]
    fn small_graph_costs_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let g = random_graph(&mut rng, 12, 1.2);
            let ids = g.node_ids();
            for &s in &ids {
                for &t in &ids {
                    let best = enumerate_best(&g, s, t);
                    match (plan_between(&g, s, t), best) {
                        (Ok(p), Some(b)) => assert!((p.cost - b).abs() <= 1e-9),
                        (Err(Error::NoPath(..)), None) => {}
                        (r, b) => panic!("mismatch {r:?} {b:?}"),
                    }
                }
            }
        }
    }
}
