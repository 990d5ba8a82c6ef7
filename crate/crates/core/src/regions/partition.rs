//! Closed-vocabulary partition of the places graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::places::PlacesGraph;

use super::louvain::{louvain, WeightedGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    /// Final label per place.
    pub labels: BTreeMap<u64, String>,
    /// Argmax labels of observed places after BFS fill, before community relabeling.
    pub initial_labels: BTreeMap<u64, String>,
    /// Louvain community per place.
    pub communities: BTreeMap<u64, usize>,
    /// Label given to each community, indexed by community.
    pub community_labels: Vec<String>,
    /// Kernel width of the edge weights.
    pub sigma: f64,
}

/// Rescales each row to zero mean and unit variance; constant rows become zero.
pub fn z_normalize(rows: &mut [Vec<f64>]) {
    for row in rows.iter_mut() {
        let n = row.len() as f64;
        if n == 0.0 {
            continue;
        }
        let mean = row.iter().sum::<f64>() / n;
        let sd = (row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        for x in row.iter_mut() {
            *x = if sd > 1e-12 { (*x - mean) / sd } else { 0.0 };
        }
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Partition from normalized per-category scores.
///
/// `scores[c][i]` is category `c`'s normalized score at place `ids[i]`;
/// `observed[i]` marks places that carry their own argmax label before the
/// breadth-first fill.
pub fn partition_from_scores(
    graph: &PlacesGraph,
    ids: &[u64],
    names: &[String],
    scores: &[Vec<f64>],
    observed: &[bool],
) -> PartitionResult {
    let n = ids.len();
    let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let vector = |i: usize| scores.iter().map(move |row| row[i]);

    let mut initial: Vec<Option<usize>> = (0..n)
        .map(|i| observed[i].then(|| argmax(vector(i))))
        .collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| initial[i].is_some()).collect();
    while let Some(i) = queue.pop_front() {
        for nb in graph.neighbors(ids[i]) {
            if let Some(&j) = index.get(&nb) {
                if initial[j].is_none() {
                    initial[j] = initial[i];
                    queue.push_back(j);
                }
            }
        }
    }

    let dist = |a: usize, b: usize| vector(a).zip(vector(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let edges: Vec<(usize, usize)> = graph
        .edges()
        .into_iter()
        .filter_map(|(a, b)| Some((*index.get(&a)?, *index.get(&b)?)))
        .collect();
    let mut sigma = median(edges.iter().map(|&(a, b)| dist(a, b)).collect());
    if sigma <= 1e-12 {
        sigma = 1.0;
    }
    let mut wg = WeightedGraph::new(n);
    for &(a, b) in &edges {
        let d = dist(a, b);
        wg.add_edge(a, b, (-(d * d) / (sigma * sigma)).exp());
    }
    let community = louvain(&wg);
    let k = community.iter().max().map_or(0, |m| m + 1);

    let mut sums = vec![vec![0.0; names.len()]; k];
    for i in 0..n {
        for (c, s) in vector(i).enumerate() {
            sums[community[i]][c] += s;
        }
    }
    let mut label: Vec<usize> = sums.iter().map(|s| argmax(s.iter().copied())).collect();

    let winners: BTreeSet<usize> = initial.iter().flatten().copied().collect();
    for &c in &winners {
        if label.contains(&c) {
            continue;
        }
        let shared = |l: usize| label.iter().filter(|&&x| x == l).count() >= 2;
        let pick = (0..k)
            .filter(|&g| shared(label[g]))
            .map(|g| (g, sums[g][c] - sums[g][label[g]]))
            .fold(None::<(usize, f64)>, |best, (g, loss)| match best {
                Some((_, b)) if b >= loss => best,
                _ => Some((g, loss)),
            });
        if let Some((g, _)) = pick {
            label[g] = c;
        }
    }

    PartitionResult {
        labels: (0..n).map(|i| (ids[i], names[label[community[i]]].clone())).collect(),
        initial_labels: (0..n)
            .filter_map(|i| initial[i].map(|c| (ids[i], names[c].clone())))
            .collect(),
        communities: (0..n).map(|i| (ids[i], community[i])).collect(),
        community_labels: label.iter().map(|&c| names[c].clone()).collect(),
        sigma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::places::{GraphParams, TileNode};

    fn ring_graph(n: usize) -> PlacesGraph {
        let r = n as f64 / (2.0 * std::f64::consts::PI);
        let mut g = PlacesGraph::new(GraphParams::new(1.0, 0.05));
        let tiles: Vec<TileNode> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * 2.0 * std::f64::consts::PI;
                TileNode {
                    tile_id: i as u64,
                    submap_id: 0,
                    centroid: Vec3::new(r * t.cos(), r * t.sin(), 0.0),
                    normal: Vec3::z(),
                }
            })
            .collect();
        g.merge_tiles(&tiles);
        g
    }

    #[test]
    fn normalization() {
        let mut rows = vec![vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]];
        z_normalize(&mut rows);
        assert!(rows[0].iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(rows[1], vec![0.0; 3]);
    }

    #[test]
    fn bfs_fills_unobserved() {
        let g = ring_graph(8);
        let ids: Vec<u64> = (0..8).collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let scores = vec![vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0], vec![-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0]];
        let observed = vec![true, false, false, false, true, false, false, false];
        let p = partition_from_scores(&g, &ids, &names, &scores, &observed);
        assert_eq!(p.initial_labels.len(), 8);
        assert_eq!(p.initial_labels[&0], "a");
        assert_eq!(p.initial_labels[&4], "b");
    }
}
