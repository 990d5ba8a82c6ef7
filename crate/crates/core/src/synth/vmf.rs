//! Sampling from a von Mises-Fisher distribution (Wood's rejection scheme).

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

/// Draws `n` unit vectors around the unit vector `mu` with concentration `kappa`.
pub fn sample_vmf<R: Rng + ?Sized>(mu: &[f64], kappa: f64, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let d = mu.len();
    assert!(d >= 2, "vMF sampling needs dimension >= 2");
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).expect("valid beta parameters");
    (0..n)
        .map(|_| {
            let w = loop {
                let z: f64 = beta.sample(rng);
                let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
                let u: f64 = rng.random();
                if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                    break w;
                }
            };
            // Tangent direction: Gaussian projected orthogonal to mu.
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let dot: f64 = v.iter().zip(mu).map(|(a, m)| a * m).sum();
            for (a, m) in v.iter_mut().zip(mu) {
                *a -= dot * m;
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let s = (1.0 - w * w).max(0.0).sqrt();
            mu.iter().zip(&v).map(|(m, a)| w * m + s * a / norm).collect()
        })
        .collect()
}
