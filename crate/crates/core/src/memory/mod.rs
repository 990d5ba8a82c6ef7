//! Visual memory: a keyframe-indexed embedding store ranked by cosine score, and
//! the frustum-gated multi-instance retrieval loop against a mask oracle.

mod codebook;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::ingest::FramePacket;
use crate::mask::BinaryMask;
use crate::objects::obb::OrientedBBox;

pub use codebook::{normalize_text, Codebook};
pub use oracle::{CountingOracle, EmptyOracle, MaskOracle};

pub const UNIT_TOL: f64 = 1e-5;

pub(crate) fn check_unit(v: &[f64], what: &'static str) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOL || !n.is_finite() {
        return Err(Error::Param(format!("{what} norm {n:.8} is not unit")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub keyframe_id: u64,
    pub submap_id: u64,
    pub embedding: Vec<f64>,
}

/// A text query and its unit embedding. The text is carried for provenance and cache keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEmbedding {
    pub text: String,
    pub vector: Vec<f64>,
}

impl QueryEmbedding {
    pub fn new(text: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        check_unit(&vector, "query embedding")?;
        Ok(Self {
            text: text.into(),
            vector,
        })
    }

    /// Normalizes `vector` before wrapping it.
    pub fn normalized(text: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let n = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Param("query embedding has zero norm".into()));
        }
        Self::new(text, vector.into_iter().map(|x| x / n).collect())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MemoryStore {
    dim: Option<usize>,
    entries: BTreeMap<u64, MemoryEntry>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, keyframe_id: u64) -> Option<&MemoryEntry> {
        self.entries.get(&keyframe_id)
    }

    pub fn insert_entry(&mut self, keyframe_id: u64, submap_id: u64, embedding: Vec<f64>) -> Result<()> {
        if let Some(d) = self.dim {
            if embedding.len() != d {
                return Err(Error::Dimension {
                    what: "embedding",
                    expected: d,
                    got: embedding.len(),
                });
            }
        }
        check_unit(&embedding, "embedding")?;
        if self.entries.contains_key(&keyframe_id) {
            return Err(Error::DuplicateKeyframe(keyframe_id));
        }
        self.dim = Some(embedding.len());
        self.entries.insert(
            keyframe_id,
            MemoryEntry {
                keyframe_id,
                submap_id,
                embedding,
            },
        );
        Ok(())
    }

    /// Every keyframe with its cosine score, best first; ties go to the smaller id.
    pub fn score_keyframes(&self, query: &QueryEmbedding) -> Result<Vec<(u64, f64)>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let d = self.dim.unwrap_or(0);
        if query.vector.len() != d {
            return Err(Error::Dimension {
                what: "query embedding",
                expected: d,
                got: query.vector.len(),
            });
        }
        let mut ranked: Vec<(u64, f64)> = self
            .entries
            .values()
            .map(|e| (e.keyframe_id, dot(&e.embedding, &query.vector).clamp(-1.0, 1.0)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(ranked)
    }
}

pub const DEFAULT_VISIBILITY_FRACTION: f64 = 0.5;

/// Whether at least `visibility_fraction` of the box corners land inside the image
/// with positive depth, seen through `pose` (world-from-camera).
pub fn frustum_views_object_with_pose(
    packet: &FramePacket,
    pose: &RigidTransform,
    bbox: &OrientedBBox,
    visibility_fraction: f64,
) -> bool {
    let cam_from_world = pose.inverse();
    let (w, h) = (packet.width as f64, packet.height as f64);
    let visible = bbox
        .corners()
        .iter()
        .filter(|c| {
            let pc = cam_from_world.transform_point(c);
            if pc.z <= 0.0 {
                return false;
            }
            let (u, v, _) = packet.intrinsics.project(&pc);
            (-0.5..=w - 0.5).contains(&u) && (-0.5..=h - 0.5).contains(&v)
        })
        .count();
    visible as f64 >= visibility_fraction * 8.0
}

pub fn frustum_views_object(packet: &FramePacket, bbox: &OrientedBBox, visibility_fraction: f64) -> bool {
    frustum_views_object_with_pose(packet, &packet.pose, bbox, visibility_fraction)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub min_score: f64,
    pub max_keyframes: usize,
    pub visibility_fraction: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            min_score: 0.2,
            max_keyframes: 8,
            visibility_fraction: DEFAULT_VISIBILITY_FRACTION,
        }
    }
}

/// Hooks the retrieval loop uses to learn what has been mapped so far.
pub trait RetrievalGate {
    /// Whether this keyframe's frustum already views an object mapped for the current query.
    fn views_mapped(&self, keyframe_id: u64) -> Result<bool>;
    /// Receives every oracle result that produced masks, in call order.
    fn record(&mut self, keyframe_id: u64, masks: &[BinaryMask]) -> Result<()>;
}

/// Walks keyframes in descending cosine order and asks the oracle for instance
/// masks, skipping keyframes that already view a mapped object.
///
/// Stops at the first keyframe scoring below `min_score`, after `max_keyframes`
/// oracle calls, or when a non-skipped keyframe yields no masks. An empty result
/// means the concept is not present.
pub fn retrieve_instances(
    store: &MemoryStore,
    query: &QueryEmbedding,
    oracle: &mut dyn MaskOracle,
    params: &RetrievalParams,
    gate: &mut dyn RetrievalGate,
) -> Result<Vec<(u64, Vec<BinaryMask>)>> {
    let ranked = store.score_keyframes(query)?;
    let mut called = BTreeSet::new();
    let mut found = Vec::new();
    for (keyframe_id, score) in ranked {
        if score < params.min_score || called.len() >= params.max_keyframes {
            break;
        }
        if gate.views_mapped(keyframe_id)? {
            continue;
        }
        called.insert(keyframe_id);
        let masks = oracle.masks(keyframe_id, &query.text)?;
        if masks.is_empty() {
            break;
        }
        gate.record(keyframe_id, &masks)?;
        found.push((keyframe_id, masks));
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(d: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        v
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn insert_rules() {
        let mut s = MemoryStore::new();
        s.insert_entry(7, 0, unit(4, 0)).unwrap();
        assert_eq!(s.len(), 1);
        assert!(matches!(s.insert_entry(7, 0, unit(4, 1)), Err(Error::DuplicateKeyframe(7))));
        assert!(matches!(s.insert_entry(8, 0, unit(5, 1)), Err(Error::Dimension { .. })));
        assert!(s.insert_entry(9, 0, vec![0.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn identical_query_ranks_first() {
        let mut s = MemoryStore::new();
        for k in 0..4 {
            s.insert_entry(k as u64, 0, unit(4, k)).unwrap();
        }
        let q = QueryEmbedding::new("x", unit(4, 2)).unwrap();
        let ranked = s.score_keyframes(&q).unwrap();
        assert_eq!(ranked[0].0, 2);
        assert!((ranked[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_query_orders_by_id() {
        let mut s = MemoryStore::new();
        for k in [5u64, 1, 3] {
            s.insert_entry(k, 0, unit(4, 0)).unwrap();
        }
        let q = QueryEmbedding::new("x", unit(4, 3)).unwrap();
        let ranked = s.score_keyframes(&q).unwrap();
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 3, 5]);
        assert!(ranked.iter().all(|r| r.1.abs() < 1e-6));
        assert!(matches!(MemoryStore::new().score_keyframes(&q), Err(Error::EmptyMemory)));
    }

    #[test]
    fn ranking_matches_exhaustive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = MemoryStore::new();
        let mut raw = Vec::new();
        for k in 0..100u64 {
            let e = random_unit(&mut rng, 16);
            raw.push((k, e.clone()));
            s.insert_entry(k, k / 16, e).unwrap();
        }
        let q = QueryEmbedding::new("q", random_unit(&mut rng, 16)).unwrap();
        // oracle: pairwise "beats" relation, then selection by counting
        let scores: Vec<(u64, f64)> = raw
            .iter()
            .map(|(k, e)| (*k, e.iter().zip(&q.vector).map(|(a, b)| a * b).sum::<f64>()))
            .collect();
        let mut expected = vec![0u64; 100];
        for (k, sk) in &scores {
            let rank = scores
                .iter()
                .filter(|(j, sj)| sj > sk || (sj == sk && j < k))
                .count();
            expected[rank] = *k;
        }
        let got: Vec<u64> = s.score_keyframes(&q).unwrap().iter().map(|r| r.0).collect();
        assert_eq!(got, expected);
    }

    fn camera_packet(pose: RigidTransform) -> FramePacket {
        FramePacket {
            keyframe_id: 0,
            timestamp: 0.0,
            pose,
            intrinsics: Intrinsics::from_fov(32, 32, 1.2),
            height: 32,
            width: 32,
            depth: vec![0.0; 1024],
            depth_confidence: vec![0.0; 1024],
            ground_mask: vec![0; 1024],
            embedding: vec![1.0],
        }
    }

    #[test]
    fn frustum_in_front_and_behind() {
        let p = camera_packet(RigidTransform::identity());
        let ahead = OrientedBBox::axis_aligned(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.1, 0.1, 0.1));
        assert!(frustum_views_object(&p, &ahead, 0.5));
        let behind = OrientedBBox::axis_aligned(Vec3::new(0.0, 0.0, -2.0), Vec3::new(0.1, 0.1, 0.1));
        assert!(!frustum_views_object(&p, &behind, 0.5));
    }

    #[test]
    fn frustum_matches_corner_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let pose = RigidTransform::from_axis_angle(
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0),
                rng.random_range(-3.0..3.0),
                Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            );
            let p = camera_packet(pose);
            let b = OrientedBBox::axis_aligned(
                Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
                Vec3::new(rng.random_range(0.05..1.5), rng.random_range(0.05..1.5), rng.random_range(0.05..1.5)),
            );
            let frac = rng.random_range(0.0..1.0);
            // oracle: explicit inverse via matrix inverse, corner by corner
            let inv = pose.matrix().try_inverse().unwrap();
            let mut inside = 0;
            for c in b.corners() {
                let h = inv * nalgebra::Vector4::new(c.x, c.y, c.z, 1.0);
                if h.z > 0.0 {
                    let u = p.intrinsics.fx * h.x / h.z + p.intrinsics.cx;
                    let v = p.intrinsics.fy * h.y / h.z + p.intrinsics.cy;
                    if (-0.5..=31.5).contains(&u) && (-0.5..=31.5).contains(&v) {
                        inside += 1;
                    }
                }
            }
            assert_eq!(frustum_views_object(&p, &b, frac), inside as f64 / 8.0 >= frac);
        }
    }

    struct ScriptedOracle {
        hits: BTreeMap<u64, usize>,
        calls: Vec<u64>,
    }

    impl MaskOracle for ScriptedOracle {
        fn masks(&mut self, keyframe_id: u64, _text: &str) -> Result<Vec<BinaryMask>> {
            self.calls.push(keyframe_id);
            let n = self.hits.get(&keyframe_id).copied().unwrap_or(0);
            Ok(vec![BinaryMask::full(2, 2); n])
        }
    }

    /// Keyframe k "views" the objects mapped from the keyframes in `overlaps[k]`.
    struct OverlapGate {
        overlaps: BTreeMap<u64, Vec<u64>>,
        mapped: Vec<u64>,
    }

    impl RetrievalGate for OverlapGate {
        fn views_mapped(&self, keyframe_id: u64) -> Result<bool> {
            Ok(self
                .overlaps
                .get(&keyframe_id)
                .is_some_and(|o| o.iter().any(|m| self.mapped.contains(m))))
        }
        fn record(&mut self, keyframe_id: u64, _masks: &[BinaryMask]) -> Result<()> {
            self.mapped.push(keyframe_id);
            Ok(())
        }
    }

    fn graded_store(n: u64) -> MemoryStore {
        // keyframe k has cosine 1 - 0.1 k with the query direction
        let mut s = MemoryStore::new();
        for k in 0..n {
            let c = 1.0 - 0.1 * k as f64;
            s.insert_entry(k, 0, vec![c, (1.0 - c * c).sqrt()]).unwrap();
        }
        s
    }

    #[test]
    fn single_instance_skips_second_view() {
        let store = graded_store(5);
        let q = QueryEmbedding::new("mug", vec![1.0, 0.0]).unwrap();
        let mut oracle = ScriptedOracle {
            hits: BTreeMap::from([(0, 1), (1, 1)]),
            calls: vec![],
        };
        let mut gate = OverlapGate {
            overlaps: BTreeMap::from([(1, vec![0])]),
            mapped: vec![],
        };
        let out = retrieve_instances(&store, &q, &mut oracle, &RetrievalParams::default(), &mut gate).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, 0);
        // keyframe 1 skipped, keyframe 2 called and returned nothing
        assert_eq!(oracle.calls, vec![0, 2]);
    }

    #[test]
    fn absent_concept_stops_after_one_call() {
        let store = graded_store(5);
        let q = QueryEmbedding::new("dragon", vec![1.0, 0.0]).unwrap();
        let mut oracle = ScriptedOracle {
            hits: BTreeMap::new(),
            calls: vec![],
        };
        let mut gate = OverlapGate {
            overlaps: BTreeMap::new(),
            mapped: vec![],
        };
        let params = RetrievalParams {
            min_score: -1.0,
            ..Default::default()
        };
        let out = retrieve_instances(&store, &q, &mut oracle, &params, &mut gate).unwrap();
        assert!(out.is_empty());
        assert_eq!(oracle.calls.len(), 1);
    }

    #[test]
    fn bounded_by_score_and_call_budget() {
        let store = graded_store(10);
        let q = QueryEmbedding::new("k", vec![1.0, 0.0]).unwrap();
        let hits: BTreeMap<u64, usize> = (0..10).map(|k| (k, 1)).collect();
        let mut oracle = ScriptedOracle {
            hits: hits.clone(),
            calls: vec![],
        };
        let mut gate = OverlapGate {
            overlaps: BTreeMap::new(),
            mapped: vec![],
        };
        let params = RetrievalParams {
            min_score: 0.55,
            max_keyframes: 8,
            ..Default::default()
        };
        retrieve_instances(&store, &q, &mut oracle, &params, &mut gate).unwrap();
        // scores 1.0 .. 0.6 pass (0.5 < 0.55)
        assert_eq!(oracle.calls, vec![0, 1, 2, 3, 4]);

        let mut oracle = ScriptedOracle { hits, calls: vec![] };
        let params = RetrievalParams {
            min_score: -1.0,
            max_keyframes: 3,
            ..Default::default()
        };
        retrieve_instances(&store, &q, &mut oracle, &params, &mut gate).unwrap();
        assert_eq!(oracle.calls.len(), 3);
    }

    #[test]
    fn raising_min_score_never_adds_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut s = MemoryStore::new();
            for k in 0..20u64 {
                s.insert_entry(k, 0, random_unit(&mut rng, 6)).unwrap();
            }
            let q = QueryEmbedding::new("q", random_unit(&mut rng, 6)).unwrap();
            let hits: BTreeMap<u64, usize> = (0..20).filter(|_| rng.random_bool(0.8)).map(|k| (k, 1)).collect();
            let overlaps: BTreeMap<u64, Vec<u64>> = (0..20)
                .map(|k| (k, (0..20).filter(|_| rng.random_bool(0.1)).collect()))
                .collect();
            let lo: f64 = rng.random_range(-1.0..0.5);
            let hi = lo + rng.random_range(0.0..0.5);
            let run = |min_score: f64| {
                let mut o = ScriptedOracle { hits: hits.clone(), calls: vec![] };
                let mut g = OverlapGate { overlaps: overlaps.clone(), mapped: vec![] };
                let p = RetrievalParams { min_score, max_keyframes: 20, ..Default::default() };
                retrieve_instances(&s, &q, &mut o, &p, &mut g).unwrap();
                o.calls
            };
            let (calls_lo, calls_hi) = (run(lo), run(hi));
            assert!(calls_hi.iter().all(|c| calls_lo.contains(c)));
            let unique: BTreeSet<_> = calls_lo.iter().collect();
            assert_eq!(unique.len(), calls_lo.len());
        }
    }
}
