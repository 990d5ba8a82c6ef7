use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::places::PlacesGraph;

/// Union-find with path halving and union by size.
#[derive(Clone, Debug)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Ascending place ids.
    pub place_ids: Vec<u64>,
    /// Mean propagated score over the region.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Connected components of the subgraph induced by `members`, each sorted,
/// listed by smallest member id.
pub fn induced_components(members: &BTreeSet<u64>, graph: &PlacesGraph) -> Vec<Vec<u64>> {
    let ids: Vec<u64> = members.iter().copied().collect();
    let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut sets = DisjointSets::new(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        for nb in graph.neighbors(id) {
            if let Some(&j) = index.get(&nb) {
                sets.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        groups.entry(sets.find(i)).or_default().push(id);
    }
    let mut out: Vec<Vec<u64>> = groups.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

/// Components of at least `min_size` places, best mean score first.
pub fn extract_regions(
    in_set: &BTreeSet<u64>,
    graph: &PlacesGraph,
    scores: &BTreeMap<u64, f64>,
    min_size: usize,
) -> Vec<Region> {
    let mut regions: Vec<Region> = induced_components(in_set, graph)
        .into_iter()
        .filter(|c| c.len() >= min_size)
        .map(|c| {
            let score = c.iter().map(|id| scores.get(id).copied().unwrap_or(0.0)).sum::<f64>() / c.len() as f64;
            Region {
                place_ids: c,
                score,
                label: None,
            }
        })
        .collect();
    regions.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.place_ids[0].cmp(&b.place_ids[0])));
    regions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::places::{GraphParams, TileNode};

    fn line_graph(n: usize) -> PlacesGraph {
        let mut g = PlacesGraph::new(GraphParams::new(1.0, 0.05));
        let tiles: Vec<TileNode> = (0..n)
            .map(|i| TileNode {
                tile_id: i as u64,
                submap_id: 0,
                centroid: Vec3::new(i as f64, 0.0, 0.0),
                normal: Vec3::z(),
            })
            .collect();
        g.merge_tiles(&tiles);
        g
    }

    #[test]
    fn empty_in_set() {
        let g = line_graph(5);
        assert!(extract_regions(&BTreeSet::new(), &g, &BTreeMap::new(), 1).is_empty());
    }

    #[test]
    fn gap_splits_and_min_size_filters() {
        let g = line_graph(12);
        let in_set: BTreeSet<u64> = [0, 1, 2, 3, 5, 6, 8, 9, 10, 11].into_iter().collect();
        let scores: BTreeMap<u64, f64> = (0..12).map(|i| (i, if i >= 8 { 2.0 } else { 1.0 })).collect();
        let r = extract_regions(&in_set, &g, &scores, 4);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].place_ids, vec![8, 9, 10, 11]);
        assert_eq!(r[1].place_ids, vec![0, 1, 2, 3]);
    }

    proptest::proptest! {
        #[test]
        fn regions_connected_and_large_enough(
            members in proptest::collection::btree_set(0u64..30, 0..30),
            min_size in 1usize..6,
        ) {
            let g = line_graph(30);
            let scores: BTreeMap<u64, f64> = (0..30).map(|i| (i, i as f64)).collect();
            let regions = extract_regions(&members, &g, &scores, min_size);
            let mut seen = BTreeSet::new();
            for r in &regions {
                proptest::prop_assert!(r.place_ids.len() >= min_size);
                proptest::prop_assert!(r.place_ids.iter().all(|p| members.contains(p) && seen.insert(*p)));
                // On a line, a connected set is a run of consecutive ids.
                proptest::prop_assert!(r.place_ids.windows(2).all(|w| w[1] == w[0] + 1));
            }
        }
    }
}
