//! The scene graph engine: owns every layer and routes ingestion, pose updates and queries.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::ingest::{FramePacket, FrameStore, PoseUpdateEvent, SessionDir, DEFAULT_SUBMAP_SIZE};
use crate::memory::{normalize_text, Codebook, MaskOracle, MemoryStore, QueryEmbedding};
use crate::objects::{ObjectCache, ObjectQueryOutcome, ObjectQueryParams};
use crate::places::{PlacesLayer, PlacesParams, PlannedPath};
use crate::regions::{observes, PartitionResult, PropagationParams, RegionQueryResult, RegionsLayer};

pub const STATE_FILE: &str = "scenegraph.json";
pub const CODEBOOK_FILE: &str = "codebook.json";
pub const SEED_ENV: &str = "SCENEGRAPH_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub submap_size: usize,
    pub places: PlacesParams,
    pub propagation: PropagationParams,
    pub objects: ObjectQueryParams,
    /// Farthest a keyframe can be from a place it observes.
    pub observation_range: f64,
    /// Seed for every stochastic step (plane sampling, mixture initialization).
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            submap_size: DEFAULT_SUBMAP_SIZE,
            places: PlacesParams::default(),
            propagation: PropagationParams::default(),
            objects: ObjectQueryParams::default(),
            observation_range: crate::regions::DEFAULT_OBSERVATION_RANGE,
            seed: 0,
        }
    }
}

impl EngineConfig {
    /// Defaults with the seed taken from `SCENEGRAPH_SEED` when set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Param(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    /// Sets the confidence gate used by both back-projection paths.
    pub fn with_confidence_threshold(mut self, t: f64) -> Self {
        self.places.confidence_threshold = t;
        self.objects.confidence_threshold = t;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub keyframes: usize,
    pub submaps: usize,
    pub candidate_tiles: usize,
    pub places: usize,
    pub edges: usize,
    pub observed_places: usize,
    pub cached_objects: usize,
    pub cached_queries: usize,
    pub sparse_map_points: usize,
    pub object_points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneGraph {
    pub config: EngineConfig,
    frames: FrameStore,
    memory: MemoryStore,
    places: PlacesLayer,
    regions: RegionsLayer,
    objects: ObjectCache,
    #[serde(skip)]
    pending: Vec<FramePacket>,
    #[serde(skip)]
    codebook: Option<Codebook>,
}

impl SceneGraph {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            config,
            frames: FrameStore::new(),
            memory: MemoryStore::new(),
            places: PlacesLayer::new(config.places),
            regions: RegionsLayer::new(config.propagation, config.seed),
            objects: ObjectCache::new(),
            pending: Vec::new(),
            codebook: None,
        }
    }

    pub fn frames(&self) -> &FrameStore {
        &self.frames
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    pub fn places(&self) -> &PlacesLayer {
        &self.places
    }

    pub fn regions(&self) -> &RegionsLayer {
        &self.regions
    }

    pub fn objects(&self) -> &ObjectCache {
        &self.objects
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        self.codebook.as_ref()
    }

    pub fn set_codebook(&mut self, codebook: Codebook) {
        self.codebook = Some(codebook);
    }

    /// Query embedding for `text` from the session codebook.
    pub fn embed(&self, text: &str) -> Result<QueryEmbedding> {
        self.codebook
            .as_ref()
            .ok_or_else(|| Error::Param("session has no concept codebook".into()))?
            .embed(text)
    }

    /// Buffers one packet; a full batch becomes a submap. Returns the new submap id if one was formed.
    pub fn ingest_packet(&mut self, packet: FramePacket) -> Result<Option<u64>> {
        packet.validate()?;
        if self.frames.contains(packet.keyframe_id) || self.pending.iter().any(|p| p.keyframe_id == packet.keyframe_id) {
            return Err(Error::DuplicateKeyframe(packet.keyframe_id));
        }
        self.pending.push(packet);
        if self.pending.len() >= self.config.submap_size {
            return self.flush();
        }
        Ok(None)
    }

    /// Turns any buffered packets into a (possibly short) submap.
    pub fn flush(&mut self) -> Result<Option<u64>> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        let batch = std::mem::take(&mut self.pending);
        self.process_submap(batch).map(Some)
    }

    /// Ingests a whole packet sequence, including the final partial batch.
    pub fn ingest_all(&mut self, packets: impl IntoIterator<Item = FramePacket>) -> Result<Vec<u64>> {
        let mut formed = Vec::new();
        for p in packets {
            formed.extend(self.ingest_packet(p)?);
        }
        formed.extend(self.flush()?);
        Ok(formed)
    }

    fn process_submap(&mut self, batch: Vec<FramePacket>) -> Result<u64> {
        let old_keyframes: Vec<u64> = self.frames.packets().map(|p| p.keyframe_id).collect();
        let submap = self.frames.assemble_submap(batch, self.config.submap_size)?.clone();
        for &kf in &submap.keyframe_ids {
            let p = self.frames.packet(kf)?;
            self.memory.insert_entry(kf, submap.submap_id, p.unit_embedding())?;
        }
        let packets: Vec<&FramePacket> = submap
            .keyframe_ids
            .iter()
            .map(|&kf| self.frames.packet(kf))
            .collect::<Result<_>>()?;
        let summary = self
            .places
            .add_submap(submap.submap_id, &submap.base_transform, &packets, self.config.seed)?
            .clone();

        let dim = self.memory.dim().unwrap_or(0);
        for &id in &summary.candidate_ids {
            self.regions.add_place(id, dim)?;
        }
        let bases = self.bases();
        let all_tiles: Vec<(u64, Vec3)> = self
            .places
            .tiles()
            .map(|t| (t.tile_id, self.places.world_centroid(t.tile_id, &bases).expect("known tile")))
            .collect();
        let new_tiles: Vec<(u64, Vec3)> = summary
            .candidate_ids
            .iter()
            .map(|&id| (id, self.places.world_centroid(id, &bases).expect("known tile")))
            .collect();
        for &kf in &submap.keyframe_ids {
            self.attach_views(kf, &all_tiles)?;
        }
        for kf in old_keyframes {
            self.attach_views(kf, &new_tiles)?;
        }
        self.regions.invalidate();
        Ok(submap.submap_id)
    }

    fn attach_views(&mut self, keyframe_id: u64, tiles: &[(u64, Vec3)]) -> Result<()> {
        let packet = self.frames.packet(keyframe_id)?;
        let cam_from_world = self.frames.world_pose(keyframe_id)?.inverse();
        let range = self.config.observation_range;
        let seen: Vec<u64> = tiles
            .iter()
            .filter(|(_, c)| observes(packet, &cam_from_world, c, range))
            .map(|(id, _)| *id)
            .collect();
        let embedding = &self.memory.get(keyframe_id).ok_or(Error::UnknownKeyframe(keyframe_id))?.embedding;
        for id in seen {
            self.regions.attach_observation(id, keyframe_id, embedding)?;
        }
        Ok(())
    }

    /// Current base transform of every submap.
    pub fn bases(&self) -> BTreeMap<u64, RigidTransform> {
        self.frames
            .submaps()
            .iter()
            .map(|s| (s.submap_id, s.base_transform))
            .collect()
    }

    /// Applies a loop-closure correction to one submap and everything derived from it.
    pub fn apply_pose_update(&mut self, event: &PoseUpdateEvent) -> Result<()> {
        self.frames.apply_pose_update(event)?;
        self.places.rebuild(&self.bases());
        self.objects.apply_pose_update(
            event.submap_id,
            &event.transform,
            &self.frames,
            self.config.objects.trim_quantile,
        )?;
        self.regions.invalidate();
        Ok(())
    }

    pub fn query_object(&mut self, query: &QueryEmbedding, oracle: &mut dyn MaskOracle) -> Result<ObjectQueryOutcome> {
        let params = self.config.objects;
        self.query_object_with(query, oracle, &params)
    }

    pub fn query_object_with(
        &mut self,
        query: &QueryEmbedding,
        oracle: &mut dyn MaskOracle,
        params: &ObjectQueryParams,
    ) -> Result<ObjectQueryOutcome> {
        self.objects
            .query_object(&self.frames, &self.memory, query, oracle, params)
    }

    /// Region query through the per-text cache. The flag reports a cache hit.
    pub fn query_region(&mut self, query: &QueryEmbedding) -> Result<(RegionQueryResult, bool)> {
        let key = normalize_text(&query.text);
        if let Some(hit) = self.regions.cached(&key) {
            return Ok((hit.clone(), true));
        }
        let result = self.regions.query_region(self.places.graph(), query)?;
        self.regions.store(key, result.clone());
        Ok((result, false))
    }

    pub fn plan_path(&self, from: &Vec3, to: &Vec3) -> Result<PlannedPath> {
        self.places.plan(from, to)
    }

    pub fn partition(&self, categories: &[QueryEmbedding]) -> Result<PartitionResult> {
        self.regions.partition(self.places.graph(), categories)
    }

    pub fn stats(&self) -> EngineStats {
        let graph = self.places.graph();
        EngineStats {
            keyframes: self.frames.keyframe_count(),
            submaps: self.frames.submaps().len(),
            candidate_tiles: self.places.tiles().count(),
            places: graph.len(),
            edges: graph.edges().len(),
            observed_places: graph
                .node_ids()
                .into_iter()
                .filter(|id| self.regions.stat(*id).is_some_and(|s| s.count > 0))
                .count(),
            cached_objects: self.objects.len(),
            cached_queries: self.objects.queries().len(),
            sparse_map_points: self.places.sparse_point_count(),
            object_points: self.objects.point_count(),
        }
    }

    /// Serialized engine state (everything except raw packets and unflushed input).
    pub fn state_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Writes the engine state next to the session's packet records.
    pub fn save(&self, session: impl AsRef<Path>) -> Result<()> {
        if !self.pending.is_empty() {
            return Err(Error::Batch("unflushed packets; call flush before saving".into()));
        }
        let path = session.as_ref().join(STATE_FILE);
        std::fs::write(&path, self.state_json()?).map_err(|e| Error::io(path, e))
    }

    /// Loads saved state and re-attaches the packet records (and codebook, if present).
    pub fn load(session: impl AsRef<Path>) -> Result<Self> {
        let root = session.as_ref();
        let path = root.join(STATE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut engine: SceneGraph = serde_json::from_str(&text)?;
        let dir = SessionDir::open(root)?;
        engine.frames.restore_packets(dir.read_packets()?)?;
        engine.load_codebook(root)?;
        Ok(engine)
    }

    /// Ingests every record of a session directory into a fresh engine.
    pub fn ingest_session(session: impl AsRef<Path>, config: EngineConfig) -> Result<Self> {
        let root = session.as_ref();
        let dir = SessionDir::open(root)?;
        let mut engine = SceneGraph::new(config);
        engine.ingest_all(dir.read_packets()?)?;
        engine.load_codebook(root)?;
        Ok(engine)
    }

    fn load_codebook(&mut self, root: &Path) -> Result<()> {
        let path = root.join(CODEBOOK_FILE);
        if path.exists() {
            self.codebook = Some(Codebook::load(path)?);
        }
        Ok(())
    }
}
