//! Regions layer: per-place vMF statistics, query scoring with confidence-aware
//! propagation, mixture-based splitting and connected-region extraction.

pub mod components;
pub mod gmm;
pub mod louvain;
pub mod partition;
pub mod propagate;
pub mod vmf;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::ingest::FramePacket;
use crate::memory::QueryEmbedding;
use crate::places::PlacesGraph;

pub use components::{extract_regions, induced_components, Region};
pub use gmm::{fit_gmm2, gmm_split, Gmm1d, GmmSplit};
pub use partition::{partition_from_scores, z_normalize, PartitionResult};
pub use propagate::{alphas, median_lambda, propagate_scores, Propagation, PropagationParams};
pub use vmf::{estimate_kappa, PlaceStat, KAPPA_MAX};

pub const DEFAULT_OBSERVATION_RANGE: f64 = 7.0;

/// Depth slack when deciding whether a place is hidden behind other geometry.
const OCCLUSION_SLACK: f64 = 0.15;
const OCCLUSION_SLACK_PER_METER: f64 = 0.05;

/// Whether a keyframe observes `point`: it projects into the image with
/// positive depth, lies within `max_range`, and is not behind the surface
/// recorded in the depth map at that pixel. `cam_from_world` is the inverse of
/// the keyframe's world pose.
pub fn observes(packet: &FramePacket, cam_from_world: &RigidTransform, point: &Vec3, max_range: f64) -> bool {
    let pc = cam_from_world.transform_point(point);
    if pc.z <= 0.0 || pc.norm() > max_range {
        return false;
    }
    let (u, v, z) = packet.intrinsics.project(&pc);
    let (ui, vi) = (u.round(), v.round());
    if ui < 0.0 || vi < 0.0 || ui >= packet.width as f64 || vi >= packet.height as f64 {
        return false;
    }
    let d = packet.depth_at(ui as usize, vi as usize) as f64;
    d <= 0.0 || z <= d + OCCLUSION_SLACK + OCCLUSION_SLACK_PER_METER * z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionQueryResult {
    pub query_text: String,
    pub regions: Vec<Region>,
    /// Smallest propagated score inside the mixture's high component.
    pub threshold: Option<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub in_set_size: usize,
    pub place_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Scores of one query over the graph's nodes, in ascending id order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPlaces {
    pub ids: Vec<u64>,
    pub raw: Vec<f64>,
    pub propagation: Propagation,
    pub lambda: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RegionsLayer {
    pub params: PropagationParams,
    pub seed: u64,
    dim: Option<usize>,
    stats: BTreeMap<u64, PlaceStat>,
    observations: BTreeMap<u64, BTreeSet<u64>>,
    cache: BTreeMap<String, RegionQueryResult>,
}

impl RegionsLayer {
    pub fn new(params: PropagationParams, seed: u64) -> Self {
        Self {
            params,
            seed,
            ..Self::default()
        }
    }

    pub fn add_place(&mut self, place_id: u64, dim: usize) -> Result<()> {
        if let Some(d) = self.dim {
            if d != dim {
                return Err(Error::Dimension {
                    what: "place statistic",
                    expected: d,
                    got: dim,
                });
            }
        }
        self.dim = Some(dim);
        self.stats.entry(place_id).or_insert_with(|| PlaceStat::new(place_id, dim));
        Ok(())
    }

    pub fn stat(&self, place_id: u64) -> Option<&PlaceStat> {
        self.stats.get(&place_id)
    }

    pub fn stats(&self) -> impl Iterator<Item = &PlaceStat> {
        self.stats.values()
    }

    pub fn observers(&self, place_id: u64) -> Option<&BTreeSet<u64>> {
        self.observations.get(&place_id)
    }

    /// Adds one keyframe's embedding to a place. Returns false if that keyframe
    /// was already attached.
    pub fn attach_observation(&mut self, place_id: u64, keyframe_id: u64, embedding: &[f64]) -> Result<bool> {
        let stat = self.stats.get_mut(&place_id).ok_or(Error::UnknownPlace(place_id))?;
        let seen = self.observations.entry(place_id).or_default();
        if seen.contains(&keyframe_id) {
            return Ok(false);
        }
        stat.attach(embedding)?;
        seen.insert(keyframe_id);
        self.cache.clear();
        Ok(true)
    }

    /// `κ_i·<μ_i, q>` for every graph node.
    pub fn score_places(&self, graph: &PlacesGraph, query: &QueryEmbedding) -> BTreeMap<u64, f64> {
        graph
            .node_ids()
            .into_iter()
            .map(|id| (id, self.stats.get(&id).map_or(0.0, |s| s.score(&query.vector))))
            .collect()
    }

    /// λ from the graph's well-observed places unless fixed in the parameters.
    pub fn lambda(&self, graph: &PlacesGraph) -> f64 {
        self.params.lambda.unwrap_or_else(|| {
            median_lambda(
                graph
                    .node_ids()
                    .into_iter()
                    .filter_map(|id| self.stats.get(&id))
                    .map(|s| (s.count, s.kappa)),
            )
        })
    }

    pub fn scored_places(&self, graph: &PlacesGraph, query: &QueryEmbedding) -> Result<ScoredPlaces> {
        if graph.is_empty() {
            return Err(Error::NoPlaces);
        }
        if let Some(d) = self.dim {
            if query.vector.len() != d {
                return Err(Error::Dimension {
                    what: "query embedding",
                    expected: d,
                    got: query.vector.len(),
                });
            }
        }
        let ids = graph.node_ids();
        let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let raw_map = self.score_places(graph, query);
        let raw: Vec<f64> = ids.iter().map(|id| raw_map[id]).collect();
        let neighbors: Vec<Vec<usize>> = ids
            .iter()
            .map(|&id| graph.neighbors(id).map(|nb| index[&nb]).collect())
            .collect();
        let kappa: Vec<f64> = ids
            .iter()
            .map(|id| self.stats.get(id).map_or(0.0, |s| s.kappa))
            .collect();
        let lambda = self.lambda(graph);
        let propagation = propagate_scores(&raw, &neighbors, &kappa, lambda, &self.params)?;
        Ok(ScoredPlaces {
            ids,
            raw,
            propagation,
            lambda,
        })
    }

    /// Score, propagate, split and extract connected regions.
    pub fn query_region(&self, graph: &PlacesGraph, query: &QueryEmbedding) -> Result<RegionQueryResult> {
        let scored = self.scored_places(graph, query)?;
        let split = gmm_split(&scored.propagation.scores, self.seed);
        let in_set: BTreeSet<u64> = split.in_set.iter().map(|&i| scored.ids[i]).collect();
        let smoothed: BTreeMap<u64, f64> = scored
            .ids
            .iter()
            .copied()
            .zip(scored.propagation.scores.iter().copied())
            .collect();
        let regions = extract_regions(&in_set, graph, &smoothed, self.params.min_size);
        Ok(RegionQueryResult {
            query_text: query.text.clone(),
            regions,
            threshold: split.threshold,
            lambda: scored.lambda,
            iterations: scored.propagation.iterations,
            in_set_size: in_set.len(),
            place_count: scored.ids.len(),
            diagnostic: split.diagnostic,
        })
    }

    pub fn cached(&self, key: &str) -> Option<&RegionQueryResult> {
        self.cache.get(key)
    }

    pub fn store(&mut self, key: String, result: RegionQueryResult) {
        self.cache.insert(key, result);
    }

    /// Drops cached region answers; called whenever the graph or statistics change.
    pub fn invalidate(&mut self) {
        self.cache.clear();
    }

    /// Per-place labels for a closed vocabulary.
    pub fn partition(&self, graph: &PlacesGraph, categories: &[QueryEmbedding]) -> Result<PartitionResult> {
        if categories.len() < 2 {
            return Err(Error::TooFewCategories(categories.len()));
        }
        if graph.is_empty() {
            return Err(Error::NoPlaces);
        }
        let mut rows = Vec::with_capacity(categories.len());
        let mut ids = Vec::new();
        for q in categories {
            let scored = self.scored_places(graph, q)?;
            ids = scored.ids;
            rows.push(scored.propagation.scores);
        }
        z_normalize(&mut rows);
        let observed: Vec<bool> = ids
            .iter()
            .map(|id| self.stats.get(id).is_some_and(|s| s.count > 0))
            .collect();
        let names: Vec<String> = categories.iter().map(|q| q.text.clone()).collect();
        Ok(partition_from_scores(graph, &ids, &names, &rows, &observed))
    }
}
