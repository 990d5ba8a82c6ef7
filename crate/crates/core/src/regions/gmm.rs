//! Two-component 1D Gaussian mixture fitted by EM.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm1d {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    /// Log-likelihood of the initial parameters, then after every EM step.
    pub log_likelihood: Vec<f64>,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean) * (x - mean) / var)
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Gmm1d {
    /// Per-component log joint densities `log(w_k·N(x; μ_k, σ_k²))`.
    fn log_joint(&self, x: f64) -> [f64; 2] {
        [0, 1].map(|k| self.weights[k].ln() + log_normal(x, self.means[k], self.variances[k]))
    }

    pub fn log_likelihood_of(&self, data: &[f64]) -> f64 {
        data.iter()
            .map(|&x| {
                let [a, b] = self.log_joint(x);
                log_add(a, b)
            })
            .sum()
    }

    /// Posterior probability of each component.
    pub fn responsibilities(&self, x: f64) -> [f64; 2] {
        let [a, b] = self.log_joint(x);
        let z = log_add(a, b);
        [(a - z).exp(), (b - z).exp()]
    }

    /// Index of the component with the larger posterior; ties go to component 0.
    pub fn assign(&self, x: f64) -> usize {
        let [a, b] = self.log_joint(x);
        usize::from(b > a)
    }

    pub fn high_component(&self) -> usize {
        usize::from(self.means[1] > self.means[0])
    }
}

/// k-means++ seeding: one uniformly chosen center, then one drawn with
/// probability proportional to squared distance.
fn kmeans_pp(data: &[f64], rng: &mut ChaCha8Rng) -> [f64; 2] {
    let c0 = data[rng.random_range(0..data.len())];
    let d2: Vec<f64> = data.iter().map(|x| (x - c0) * (x - c0)).collect();
    let total: f64 = d2.iter().sum();
    let mut target = rng.random::<f64>() * total;
    let mut c1 = c0;
    for (x, w) in data.iter().zip(&d2) {
        if *w > 0.0 {
            c1 = *x;
            if target < *w {
                break;
            }
            target -= w;
        }
    }
    [c0, c1]
}

/// EM with k-means++ initialization. Returns `None` when the data has fewer
/// than two distinct values.
pub fn fit_gmm2(data: &[f64], seed: u64, max_iterations: usize) -> Option<Gmm1d> {
    let first = *data.first()?;
    if data.iter().all(|&x| x == first) {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(data, &mut rng);

    let n = data.len() as f64;
    let mut sums = [0.0; 2];
    let mut sq = [0.0; 2];
    let mut counts = [0.0; 2];
    for &x in data {
        let k = usize::from((x - centers[1]).abs() < (x - centers[0]).abs());
        sums[k] += x;
        sq[k] += x * x;
        counts[k] += 1.0;
    }
    let mut model = Gmm1d {
        weights: [0.5; 2],
        means: centers,
        variances: [1.0; 2],
        log_likelihood: Vec::new(),
    };
    for k in 0..2 {
        if counts[k] > 0.0 {
            let mean = sums[k] / counts[k];
            model.means[k] = mean;
            model.variances[k] = (sq[k] / counts[k] - mean * mean).max(VARIANCE_FLOOR);
            model.weights[k] = counts[k] / n;
        }
    }
    let spread = {
        let mean = data.iter().sum::<f64>() / n;
        (data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).max(VARIANCE_FLOOR)
    };
    for k in 0..2 {
        if counts[k] <= 1.0 {
            model.variances[k] = spread;
            model.weights[k] = model.weights[k].max(1.0 / n);
        }
    }
    let wsum = model.weights[0] + model.weights[1];
    model.weights = model.weights.map(|w| w / wsum);

    let mut ll = model.log_likelihood_of(data);
    model.log_likelihood.push(ll);
    for _ in 0..max_iterations {
        let mut r_sum = [0.0; 2];
        let mut rx = [0.0; 2];
        let mut rxx = [0.0; 2];
        for &x in data {
            let r = model.responsibilities(x);
            for k in 0..2 {
                r_sum[k] += r[k];
                rx[k] += r[k] * x;
                rxx[k] += r[k] * x * x;
            }
        }
        for k in 0..2 {
            if r_sum[k] <= 0.0 {
                continue;
            }
            let mean = rx[k] / r_sum[k];
            model.means[k] = mean;
            model.variances[k] = (rxx[k] / r_sum[k] - mean * mean).max(VARIANCE_FLOOR);
            model.weights[k] = r_sum[k] / n;
        }
        let next = model.log_likelihood_of(data);
        model.log_likelihood.push(next);
        let converged = (next - ll).abs() <= 1e-12 * ll.abs().max(1.0);
        ll = next;
        if converged {
            break;
        }
    }
    Some(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmSplit {
    /// Indices assigned to the higher-mean component, ascending.
    pub in_set: Vec<usize>,
    /// Smallest score inside the set.
    pub threshold: Option<f64>,
    pub model: Option<Gmm1d>,
    pub diagnostic: Option<String>,
}

/// Splits scores into the higher-mean mixture component and the rest.
pub fn gmm_split(scores: &[f64], seed: u64) -> GmmSplit {
    let Some(model) = fit_gmm2(scores, seed, DEFAULT_MAX_ITERATIONS) else {
        return GmmSplit {
            in_set: Vec::new(),
            threshold: None,
            model: None,
            diagnostic: Some("scores are all identical; no region distinguishable".into()),
        };
    };
    let high = model.high_component();
    let in_set: Vec<usize> = (0..scores.len()).filter(|&i| model.assign(scores[i]) == high).collect();
    let threshold = in_set.iter().map(|&i| scores[i]).min_by(f64::total_cmp);
    GmmSplit {
        in_set,
        threshold,
        model: Some(model),
        diagnostic: None,
    }
}
