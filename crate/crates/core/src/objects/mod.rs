//! Query-time objects: retrieval masks lifted to 3D, boxed, and cached by query text.

pub mod obb;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{PointCloud, RigidTransform};
use crate::ingest::{backproject_with_pose, FrameStore};
use crate::mask::BinaryMask;
use crate::memory::{
    frustum_views_object_with_pose, normalize_text, retrieve_instances, CountingOracle, MaskOracle, MemoryStore,
    QueryEmbedding, RetrievalGate, RetrievalParams,
};

pub use obb::{fit_oriented_bbox, iou_3d, osr_match, OrientedBBox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedObject {
    pub object_id: u64,
    pub query_text: String,
    /// World frame, each point tagged with its source keyframe.
    pub points: PointCloud,
    pub bbox: OrientedBBox,
    pub source_keyframes: Vec<u64>,
    pub source_submaps: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectQueryParams {
    pub retrieval: RetrievalParams,
    pub confidence_threshold: f64,
    pub trim_quantile: f64,
    /// Masks lifting to fewer points are ignored.
    pub min_points: usize,
}

impl Default for ObjectQueryParams {
    fn default() -> Self {
        Self {
            retrieval: RetrievalParams::default(),
            confidence_threshold: crate::ingest::DEFAULT_CONFIDENCE_THRESHOLD,
            trim_quantile: obb::DEFAULT_TRIM_QUANTILE,
            min_points: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectQueryOutcome {
    pub key: String,
    pub objects: Vec<CachedObject>,
    pub cache_hit: bool,
    pub oracle_calls: usize,
}

/// Instance under construction during one retrieval.
struct Instance {
    points: PointCloud,
    bbox: OrientedBBox,
    keyframes: BTreeSet<u64>,
}

/// Lifts oracle masks to 3D as they arrive and answers the frustum gate.
struct LiftingGate<'a> {
    frames: &'a FrameStore,
    params: &'a ObjectQueryParams,
    instances: Vec<Instance>,
}

impl RetrievalGate for LiftingGate<'_> {
    fn views_mapped(&self, keyframe_id: u64) -> Result<bool> {
        if self.instances.is_empty() {
            return Ok(false);
        }
        let packet = self.frames.packet(keyframe_id)?;
        let pose = self.frames.world_pose(keyframe_id)?;
        let frac = self.params.retrieval.visibility_fraction;
        Ok(self
            .instances
            .iter()
            .any(|inst| frustum_views_object_with_pose(packet, &pose, &inst.bbox, frac)))
    }

    fn record(&mut self, keyframe_id: u64, masks: &[BinaryMask]) -> Result<()> {
        let packet = self.frames.packet(keyframe_id)?;
        let pose = self.frames.world_pose(keyframe_id)?;
        let earlier = self.instances.len();
        for mask in masks {
            let cloud = backproject_with_pose(packet, &pose, mask, self.params.confidence_threshold)?;
            if cloud.len() < self.params.min_points {
                continue;
            }
            let Ok(bbox) = fit_oriented_bbox(&cloud.points, self.params.trim_quantile) else {
                continue;
            };
            let existing = self.instances[..earlier]
                .iter()
                .position(|inst| osr_match(&bbox, &inst.bbox));
            match existing {
                Some(i) => {
                    let inst = &mut self.instances[i];
                    inst.points.extend(&cloud);
                    inst.keyframes.insert(keyframe_id);
                    if let Ok(b) = fit_oriented_bbox(&inst.points.points, self.params.trim_quantile) {
                        inst.bbox = b;
                    }
                }
                None => self.instances.push(Instance {
                    points: cloud,
                    bbox,
                    keyframes: BTreeSet::from([keyframe_id]),
                }),
            }
        }
        Ok(())
    }
}

/// Objects extracted so far, and the answer recorded for every query text.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectCache {
    objects: BTreeMap<u64, CachedObject>,
    /// Normalized query text to object ids; an empty list records a nonentity.
    queries: BTreeMap<String, Vec<u64>>,
    next_id: u64,
}

impl ObjectCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &CachedObject> {
        self.objects.values()
    }

    pub fn object(&self, id: u64) -> Option<&CachedObject> {
        self.objects.get(&id)
    }

    pub fn queries(&self) -> &BTreeMap<String, Vec<u64>> {
        &self.queries
    }

    pub fn lookup(&self, text: &str) -> Option<Vec<CachedObject>> {
        self.queries
            .get(&normalize_text(text))
            .map(|ids| ids.iter().map(|id| self.objects[id].clone()).collect())
    }

    /// Point count over all cached objects.
    pub fn point_count(&self) -> usize {
        self.objects.values().map(|o| o.points.len()).sum()
    }

    /// Cache-first object query. On a miss, runs frustum-gated retrieval,
    /// lifts every mask to 3D, merges instances seen from several keyframes,
    /// and records the result (possibly empty) under the normalized text.
    pub fn query_object(
        &mut self,
        frames: &FrameStore,
        memory: &MemoryStore,
        query: &QueryEmbedding,
        oracle: &mut dyn MaskOracle,
        params: &ObjectQueryParams,
    ) -> Result<ObjectQueryOutcome> {
        let key = normalize_text(&query.text);
        if let Some(objects) = self.lookup(&key) {
            return Ok(ObjectQueryOutcome {
                key,
                objects,
                cache_hit: true,
                oracle_calls: 0,
            });
        }
        let mut counting = CountingOracle::new(oracle);
        let mut gate = LiftingGate {
            frames,
            params,
            instances: Vec::new(),
        };
        retrieve_instances(memory, query, &mut counting, &params.retrieval, &mut gate)?;
        let mut ids = Vec::new();
        for inst in gate.instances {
            let submaps: BTreeSet<u64> = inst
                .keyframes
                .iter()
                .map(|&kf| frames.submap_of(kf))
                .collect::<Result<_>>()?;
            let object = CachedObject {
                object_id: self.next_id,
                query_text: key.clone(),
                points: inst.points,
                bbox: inst.bbox,
                source_keyframes: inst.keyframes.into_iter().collect(),
                source_submaps: submaps.into_iter().collect(),
            };
            self.next_id += 1;
            ids.push(object.object_id);
            self.objects.insert(object.object_id, object);
        }
        self.queries.insert(key.clone(), ids);
        Ok(ObjectQueryOutcome {
            objects: self.lookup(&key).unwrap_or_default(),
            key,
            cache_hit: false,
            oracle_calls: counting.count(),
        })
    }

    /// Moves the points contributed by one submap. Objects drawn entirely from
    /// that submap move rigidly with their box; mixed objects are refitted.
    pub fn apply_pose_update(&mut self, submap_id: u64, transform: &RigidTransform, frames: &FrameStore, trim_quantile: f64) -> Result<()> {
        for obj in self.objects.values_mut() {
            if !obj.source_submaps.contains(&submap_id) {
                continue;
            }
            if obj.source_submaps.len() == 1 {
                obj.points = obj.points.transformed(transform);
                obj.bbox = obj.bbox.transformed(transform);
                continue;
            }
            for (p, kf) in obj.points.points.iter_mut().zip(&obj.points.sources) {
                if frames.submap_of(*kf)? == submap_id {
                    *p = transform.transform_point(p);
                }
            }
            if let Ok(b) = fit_oriented_bbox(&obj.points.points, trim_quantile) {
                obj.bbox = b;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEvaluation {
    pub osr: f64,
    pub mean_iou: f64,
    /// `(estimate index, truth index, IoU, mutual containment)` per matched pair.
    pub matches: Vec<(usize, usize, f64, bool)>,
}

/// Greedy one-to-one matching by descending IoU. osR counts matched truths
/// whose pair also passes mutual centroid containment; mean IoU averages over
/// truths with unmatched ones at zero.
pub fn evaluate_objects(estimates: &[OrientedBBox], truths: &[OrientedBBox]) -> ObjectEvaluation {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(estimates.len() * truths.len());
    for (i, e) in estimates.iter().enumerate() {
        for (j, t) in truths.iter().enumerate() {
            pairs.push((i, j, iou_3d(e, t)));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_e = vec![false; estimates.len()];
    let mut used_t = vec![false; truths.len()];
    let mut matches = Vec::new();
    for (i, j, iou) in pairs {
        if used_e[i] || used_t[j] {
            continue;
        }
        used_e[i] = true;
        used_t[j] = true;
        matches.push((i, j, iou, osr_match(&estimates[i], &truths[j])));
    }
    if truths.is_empty() {
        return ObjectEvaluation {
            osr: 0.0,
            mean_iou: 0.0,
            matches,
        };
    }
    let n = truths.len() as f64;
    ObjectEvaluation {
        osr: matches.iter().filter(|m| m.3).count() as f64 / n,
        mean_iou: matches.iter().map(|m| m.2).sum::<f64>() / n,
        matches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Mat3, Vec3};

    fn cube(x: f64) -> OrientedBBox {
        OrientedBBox::new(Vec3::new(x, 0.0, 0.0), Mat3::identity(), Vec3::new(0.5, 0.5, 0.5))
    }

    #[test]
    fn evaluation_counts() {
        let truths = vec![cube(0.0), cube(5.0), cube(10.0)];
        let perfect = evaluate_objects(&truths, &truths);
        assert_eq!(perfect.osr, 1.0);
        assert!(perfect.mean_iou > 1.0 - 2.0 / 64.0);
        let none = evaluate_objects(&[], &truths);
        assert_eq!((none.osr, none.mean_iou), (0.0, 0.0));
        let two = evaluate_objects(&truths[..2], &truths);
        assert!((two.osr - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn one_estimate_cannot_match_two_truths() {
        let truths = vec![cube(0.0), cube(0.2)];
        let e = evaluate_objects(&[cube(0.1)], &truths);
        assert_eq!(e.matches.len(), 1);
        assert!((e.osr - 0.5).abs() < 1e-12);
    }
}
