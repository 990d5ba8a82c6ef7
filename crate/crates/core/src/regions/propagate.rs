use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Neighbor-trust scale; `None` uses the median concentration of well-observed places.
    pub lambda: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Smallest region returned, in places.
    pub min_size: usize,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            lambda: None,
            tolerance: 1e-8,
            max_iterations: 500,
            min_size: 4,
        }
    }
}

/// Median κ over places with at least two observations and κ > 0; 1 if there are none.
pub fn median_lambda(stats: impl IntoIterator<Item = (usize, f64)>) -> f64 {
    let mut ks: Vec<f64> = stats
        .into_iter()
        .filter(|&(count, kappa)| count >= 2 && kappa > 0.0)
        .map(|(_, k)| k)
        .collect();
    if ks.is_empty() {
        return 1.0;
    }
    ks.sort_by(f64::total_cmp);
    let m = ks.len();
    if m % 2 == 1 {
        ks[m / 2]
    } else {
        0.5 * (ks[m / 2 - 1] + ks[m / 2])
    }
}

/// `α_i = κ_i / (κ_i + λ·deg(i))`, with isolated nodes pinned to 1.
pub fn alphas(kappa: &[f64], degree: &[usize], lambda: f64) -> Vec<f64> {
    kappa
        .iter()
        .zip(degree)
        .map(|(&k, &d)| {
            if d == 0 {
                1.0
            } else {
                let denom = k + lambda * d as f64;
                if denom > 0.0 {
                    k / denom
                } else {
                    0.0
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub scores: Vec<f64>,
    pub alphas: Vec<f64>,
    pub iterations: usize,
}

/// Jacobi iteration of `x_i = α_i·s_i + (1 − α_i)·mean_{j∈N(i)} x_j` from `x = s`
/// until the largest update is below `tolerance`.
pub fn propagate_scores(
    raw: &[f64],
    neighbors: &[Vec<usize>],
    kappa: &[f64],
    lambda: f64,
    params: &PropagationParams,
) -> Result<Propagation> {
    let n = raw.len();
    if neighbors.len() != n || kappa.len() != n {
        return Err(Error::Dimension {
            what: "propagation inputs",
            expected: n,
            got: neighbors.len().min(kappa.len()),
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::Param(format!("lambda must be positive, got {lambda}")));
    }
    let degree: Vec<usize> = neighbors.iter().map(Vec::len).collect();
    let alpha = alphas(kappa, &degree, lambda);
    let mut x = raw.to_vec();
    let mut next = vec![0.0; n];
    for iteration in 1..=params.max_iterations {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            next[i] = if degree[i] == 0 {
                raw[i]
            } else {
                let mean = neighbors[i].iter().map(|&j| x[j]).sum::<f64>() / degree[i] as f64;
                alpha[i] * raw[i] + (1.0 - alpha[i]) * mean
            };
            delta = delta.max((next[i] - x[i]).abs());
        }
        std::mem::swap(&mut x, &mut next);
        if delta < params.tolerance {
            return Ok(Propagation {
                scores: x,
                alphas: alpha,
                iterations: iteration,
            });
        }
    }
    Err(Error::NoConvergence(params.max_iterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> Vec<Vec<usize>> {
        (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect()
    }

    #[test]
    fn dominant_confidence_is_identity() {
        let s = vec![1.0, -2.0, 3.0, 0.5];
        let p = propagate_scores(&s, &ring(4), &[1e12; 4], 1.0, &PropagationParams::default()).unwrap();
        for (a, b) in p.scores.iter().zip(&s) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn balanced_confidence_gives_half() {
        let a = alphas(&[2.0, 4.0, 6.0], &[1, 2, 3], 2.0);
        assert_eq!(a, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn isolated_node_keeps_score() {
        let nb = vec![vec![1], vec![0], vec![]];
        let p = propagate_scores(&[1.0, 0.0, 7.0], &nb, &[1.0, 0.0, 0.0], 1.0, &PropagationParams::default()).unwrap();
        assert_eq!(p.scores[2], 7.0);
        // node 1 has no confidence, so it copies its only neighbor
        assert!((p.scores[1] - p.scores[0]).abs() < 1e-7);
    }

    #[test]
    fn median_ignores_placeholders() {
        assert_eq!(median_lambda([(1, 0.0), (0, 0.0), (3, 4.0), (2, 2.0), (5, 0.0)]), 3.0);
        assert_eq!(median_lambda([(1, 0.0)]), 1.0);
    }

    #[test]
    fn bad_lambda_rejected() {
        assert!(propagate_scores(&[1.0], &[vec![]], &[1.0], 0.0, &PropagationParams::default()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn output_within_input_range(
            raw in proptest::collection::vec(-5.0..5.0f64, 2..20),
            kappa_seed in proptest::collection::vec(0.0..50.0f64, 20),
            extra in proptest::collection::vec((0usize..20, 0usize..20), 0..15),
            lambda in 0.1..10.0f64,
        ) {
            let n = raw.len();
            let mut nb = ring(n);
            for (a, b) in extra {
                let (a, b) = (a % n, b % n);
                if a != b && !nb[a].contains(&b) {
                    nb[a].push(b);
                    nb[b].push(a);
                }
            }
            let kappa = &kappa_seed[..n];
            let p = propagate_scores(&raw, &nb, kappa, lambda, &PropagationParams::default()).unwrap();
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for s in &p.scores {
                proptest::prop_assert!(*s >= lo - 1e-9 && *s <= hi + 1e-9);
            }
        }
    }
}
