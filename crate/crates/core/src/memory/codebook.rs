use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::QueryEmbedding;

/// Label → unit vector table used to turn query text into embeddings.
///
/// Text missing from the table maps to a pseudo-random unit vector derived from
/// a hash of the normalized text, so out-of-vocabulary queries stay deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

pub fn normalize_text(text: &str) -> String {
    text.trim().to_lowercase()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Codebook {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, label: &str) -> Option<&Vec<f64>> {
        self.vectors.get(&normalize_text(label))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.get(label).is_some()
    }

    pub fn embed(&self, text: &str) -> Result<QueryEmbedding> {
        let key = normalize_text(text);
        let vector = match self.vectors.get(&key) {
            Some(v) => v.clone(),
            None => hashed_unit_vector(&key, self.dim),
        };
        QueryEmbedding::normalized(text, vector)
    }
}

pub(crate) fn hashed_unit_vector(key: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_case_insensitive_and_oov_is_stable() {
        let mut cb = Codebook::new(3);
        cb.vectors.insert("mug".into(), vec![0.0, 1.0, 0.0]);
        assert_eq!(cb.embed("  MUG ").unwrap().vector, vec![0.0, 1.0, 0.0]);
        let a = cb.embed("dragon").unwrap();
        let b = cb.embed("Dragon").unwrap();
        assert_eq!(a.vector, b.vector);
        assert_ne!(a.vector, cb.embed("unicorn").unwrap().vector);
    }
}
