//! Louvain modularity maximization on small weighted graphs.

use std::collections::BTreeMap;

/// Undirected weighted graph. Self-loop weight counts both ends, so a node's
/// strength is the sum of its incident weights plus its self-loop weight.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<BTreeMap<usize, f64>>,
    self_loops: Vec<f64>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        Self {
            adj: vec![BTreeMap::new(); n],
            self_loops: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Adds `w` to the edge `a–b`.
    pub fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        if a == b {
            self.self_loops[a] += 2.0 * w;
        } else {
            *self.adj[a].entry(b).or_insert(0.0) += w;
            *self.adj[b].entry(a).or_insert(0.0) += w;
        }
    }

    pub fn strength(&self, i: usize) -> f64 {
        self.adj[i].values().sum::<f64>() + self.self_loops[i]
    }

    fn total(&self) -> f64 {
        (0..self.len()).map(|i| self.strength(i)).sum()
    }
}

/// Newman modularity of a community assignment.
pub fn modularity(g: &WeightedGraph, community: &[usize]) -> f64 {
    let m2 = g.total();
    if m2 <= 0.0 {
        return 0.0;
    }
    let mut inside: BTreeMap<usize, f64> = BTreeMap::new();
    let mut tot: BTreeMap<usize, f64> = BTreeMap::new();
    for i in 0..g.len() {
        let c = community[i];
        *tot.entry(c).or_default() += g.strength(i);
        *inside.entry(c).or_default() += g.self_loops[i];
        for (&j, &w) in &g.adj[i] {
            if community[j] == c {
                *inside.entry(c).or_default() += w;
            }
        }
    }
    tot.iter()
        .map(|(c, t)| inside.get(c).copied().unwrap_or(0.0) / m2 - (t / m2) * (t / m2))
        .sum()
}

/// One round of local moves in node order. Returns the assignment and whether anything moved.
fn local_moves(g: &WeightedGraph) -> (Vec<usize>, bool) {
    let n = g.len();
    let m2 = g.total();
    let strength: Vec<f64> = (0..n).map(|i| g.strength(i)).collect();
    let mut community: Vec<usize> = (0..n).collect();
    let mut tot = strength.clone();
    let mut moved_any = false;
    if m2 <= 0.0 {
        return (community, false);
    }
    loop {
        let mut moved = false;
        for i in 0..n {
            let home = community[i];
            tot[home] -= strength[i];
            let mut links: BTreeMap<usize, f64> = BTreeMap::new();
            links.insert(home, 0.0);
            for (&j, &w) in &g.adj[i] {
                *links.entry(community[j]).or_default() += w;
            }
            let gain = |c: usize, k_in: f64| k_in - tot[c] * strength[i] / m2;
            let mut best = home;
            let mut best_gain = gain(home, links[&home]);
            for (&c, &k_in) in &links {
                let gc = gain(c, k_in);
                if gc > best_gain + 1e-12 {
                    best = c;
                    best_gain = gc;
                }
            }
            tot[best] += strength[i];
            if best != home {
                community[i] = best;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (community, moved_any)
}

/// Renumbers communities 0.. in order of first appearance.
fn compact(community: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = community
        .iter()
        .map(|c| {
            let next = map.len();
            *map.entry(*c).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn aggregate(g: &WeightedGraph, community: &[usize], k: usize) -> WeightedGraph {
    let mut out = WeightedGraph::new(k);
    for i in 0..g.len() {
        out.self_loops[community[i]] += g.self_loops[i];
        for (&j, &w) in &g.adj[i] {
            let (a, b) = (community[i], community[j]);
            if a == b {
                out.self_loops[a] += w;
            } else {
                *out.adj[a].entry(b).or_insert(0.0) += w;
            }
        }
    }
    out
}

/// Community per node, numbered by first appearance. Deterministic.
pub fn louvain(g: &WeightedGraph) -> Vec<usize> {
    let mut assignment: Vec<usize> = (0..g.len()).collect();
    let mut level = g.clone();
    loop {
        let (local, moved) = local_moves(&level);
        if !moved {
            break;
        }
        let (local, k) = compact(&local);
        for a in assignment.iter_mut() {
            *a = local[*a];
        }
        if k == level.len() {
            break;
        }
        level = aggregate(&level, &local, k);
    }
    compact(&assignment).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> WeightedGraph {
        let mut g = WeightedGraph::new(8);
        for base in [0, 4] {
            for a in 0..4 {
                for b in a + 1..4 {
                    g.add_edge(base + a, base + b, 1.0);
                }
            }
        }
        g.add_edge(3, 4, 0.1);
        g
    }

    #[test]
    fn cliques_separate() {
        let c = louvain(&two_cliques());
        assert_eq!(c, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn modularity_of_singletons_is_negative() {
        let g = two_cliques();
        let single: Vec<usize> = (0..8).collect();
        assert!(modularity(&g, &single) < 0.0);
        assert!(modularity(&g, &louvain(&g)) > 0.4);
    }

    #[test]
    fn aggregation_preserves_modularity() {
        let g = two_cliques();
        let c = vec![0, 0, 1, 1, 2, 2, 3, 3];
        let agg = aggregate(&g, &c, 4);
        let q_fine = modularity(&g, &[0, 0, 0, 0, 1, 1, 1, 1]);
        let q_coarse = modularity(&agg, &[0, 0, 1, 1]);
        assert!((q_fine - q_coarse).abs() < 1e-12);
    }

    #[test]
    fn empty_graph() {
        assert!(louvain(&WeightedGraph::new(0)).is_empty());
        assert_eq!(louvain(&WeightedGraph::new(3)), vec![0, 1, 2]);
    }
}
