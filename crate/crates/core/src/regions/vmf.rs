use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cap on the concentration estimate; reached when all observations agree.
pub const KAPPA_MAX: f64 = 1e4;

/// Per-place von Mises-Fisher summary of the observing keyframes' embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceStat {
    pub place_id: u64,
    pub mu: Vec<f64>,
    pub kappa: f64,
    pub count: usize,
    pub resultant_sum: Vec<f64>,
}

impl PlaceStat {
    pub fn new(place_id: u64, dim: usize) -> Self {
        Self {
            place_id,
            mu: vec![0.0; dim],
            kappa: 0.0,
            count: 0,
            resultant_sum: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.resultant_sum.len()
    }

    /// Adds one unit embedding and refits.
    pub fn attach(&mut self, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.dim() {
            return Err(Error::Dimension {
                what: "embedding",
                expected: self.dim(),
                got: embedding.len(),
            });
        }
        for (s, e) in self.resultant_sum.iter_mut().zip(embedding) {
            *s += e;
        }
        self.count += 1;
        self.refit();
        Ok(())
    }

    /// Recomputes `mu` and `kappa` from the resultant sum and count.
    pub fn refit(&mut self) {
        let norm = self.resultant_sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if self.count == 0 || norm == 0.0 {
            self.mu.iter_mut().for_each(|m| *m = 0.0);
            self.kappa = 0.0;
            return;
        }
        self.mu = self.resultant_sum.iter().map(|x| x / norm).collect();
        self.kappa = estimate_kappa(norm, self.count, self.dim());
    }

    /// `κ·<μ, q>`; zero for unobserved places.
    pub fn score(&self, q: &[f64]) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.kappa * crate::memory::dot(&self.mu, q)
    }
}

/// Mean resultant length with the finite-sample bias removed:
/// `r̄² = (‖S‖² − m) / (m(m − 1))`, clamped to `[0, 1]`.
pub fn mean_resultant_length(resultant_norm: f64, count: usize) -> f64 {
    if count < 2 {
        return 0.0;
    }
    let m = count as f64;
    ((resultant_norm * resultant_norm - m) / (m * (m - 1.0))).clamp(0.0, 1.0).sqrt()
}

/// High-dimensional closed-form concentration `r̄(D − r̄²)/(1 − r̄²)`, capped at
/// [`KAPPA_MAX`] and zero for a single observation.
pub fn estimate_kappa(resultant_norm: f64, count: usize, dim: usize) -> f64 {
    if count <= 1 {
        return 0.0;
    }
    let r = mean_resultant_length(resultant_norm, count);
    let r2 = r * r;
    if r2 >= 1.0 {
        return KAPPA_MAX;
    }
    (r * (dim as f64 - r2) / (1.0 - r2)).min(KAPPA_MAX)
}

/// Batch fit over a set of unit vectors.
pub fn fit_vmf(samples: &[Vec<f64>], dim: usize) -> Result<PlaceStat> {
    let mut stat = PlaceStat::new(0, dim);
    for s in samples {
        stat.attach(s)?;
    }
    Ok(stat)
}
