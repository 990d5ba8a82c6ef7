//! Deterministic synthetic scenes with full ground truth.
//!
//! A [`SceneSpec`] lists floor polygons (each carrying a region label), labeled
//! boxes, and cameras. [`SyntheticSession::build`] ray-casts every camera,
//! mixes concept vectors into keyframe embeddings, and returns packets, the
//! concept codebook, ground truth, and an exact instance-mask oracle.

pub mod presets;
pub mod raycast;
pub mod truth;
pub mod vmf;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{look_at, Intrinsics, RigidTransform, Vec3};
use crate::ingest::format::{Manifest, SessionDir};
use crate::ingest::FramePacket;
use crate::mask::BinaryMask;
use crate::memory::{normalize_text, Codebook, MaskOracle};
use crate::objects::OrientedBBox;

use raycast::{FloorPolygon, Geometry, Hit, Rendering, SolidBox};
pub use truth::{enclosing_aabb, evaluate_regions, GroundTruth, LabelScore, RegionEvaluation, TruthObject, TruthRegion};
pub use vmf::sample_vmf;

pub const BACKGROUND: &str = "background";
pub const SCENE_FILE: &str = "scene.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const DEFAULT_MIN_MASK_PIXELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorSpec {
    pub label: String,
    #[serde(default)]
    pub z: f64,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub label: String,
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Rotation about world z, degrees.
    #[serde(default)]
    pub yaw_deg: f64,
    /// Composite objects this box belongs to (e.g. the legs and top of a table).
    #[serde(default)]
    pub groups: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub hfov_deg: f64,
    /// Total noise norm added to each keyframe embedding before renormalizing.
    pub embedding_noise: f64,
    pub submap_size: usize,
    /// Extra weight an object pixel gives to the region concept of the floor
    /// beneath it, so views inside a room carry that room's context.
    #[serde(default)]
    pub region_context: f64,
    #[serde(default)]
    pub floors: Vec<FloorSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    pub cameras: Vec<CameraSpec>,
    /// Concepts placed in the codebook but absent from the scene.
    #[serde(default)]
    pub extra_concepts: Vec<String>,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl SceneSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SceneSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        if self.height == 0 || self.width == 0 || self.dim < 2 || self.submap_size == 0 {
            return bad("image size, embedding dimension and submap size must be positive".into());
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return bad(format!("field of view {} outside (0, 180)", self.hfov_deg));
        }
        if !(self.embedding_noise >= 0.0 && self.embedding_noise.is_finite()) {
            return bad("embedding noise must be finite and non-negative".into());
        }
        if !(self.region_context >= 0.0 && self.region_context.is_finite()) {
            return bad("region context weight must be finite and non-negative".into());
        }
        if self.cameras.is_empty() {
            return bad("scene has no cameras".into());
        }
        for f in &self.floors {
            if f.polygon.len() < 3 {
                return bad(format!("floor '{}' needs at least 3 vertices", f.label));
            }
        }
        for b in &self.boxes {
            if b.half_extents.iter().any(|h| !(*h > 0.0)) {
                return bad(format!("box '{}' has a non-positive half extent", b.label));
            }
        }
        let n = self.concepts().len();
        if n > self.dim {
            return bad(format!("{n} concepts do not fit in dimension {}", self.dim));
        }
        Ok(())
    }

    /// Every concept label, sorted: floor labels, box labels, groups, extras and background.
    pub fn concepts(&self) -> Vec<String> {
        let mut set: BTreeSet<String> = BTreeSet::new();
        set.insert(BACKGROUND.to_string());
        set.extend(self.floors.iter().map(|f| normalize_text(&f.label)));
        for b in &self.boxes {
            set.insert(normalize_text(&b.label));
            set.extend(b.groups.iter().map(|g| normalize_text(g)));
        }
        set.extend(self.extra_concepts.iter().map(|c| normalize_text(c)));
        set.into_iter().collect()
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.hfov_deg.to_radians())
    }

    pub fn poses(&self) -> Result<Vec<RigidTransform>> {
        self.cameras.iter().map(|c| look_at(v3(c.eye), v3(c.target))).collect()
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            floors: self
                .floors
                .iter()
                .map(|f| FloorPolygon {
                    z: f.z,
                    vertices: f.polygon.clone(),
                })
                .collect(),
            boxes: self
                .boxes
                .iter()
                .map(|b| SolidBox::new(v3(b.center), v3(b.half_extents), b.yaw_deg.to_radians()))
                .collect(),
        }
    }

    /// Orthonormal concept vectors from Gram-Schmidt over seeded Gaussian draws.
    pub fn codebook(&self) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xC0DE_B00C);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut book = Codebook::new(self.dim);
        for label in self.concepts() {
            let v = loop {
                let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= d * y;
                    }
                }
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-6 {
                    break v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
                }
            };
            basis.push(v.clone());
            book.vectors.insert(label, v);
        }
        book
    }

    /// Concepts a pixel contributes to a keyframe embedding.
    fn pixel_concepts(&self, hit: Hit) -> Vec<String> {
        match hit {
            Hit::Miss => vec![BACKGROUND.to_string()],
            Hit::Floor(i) => vec![normalize_text(&self.floors[i].label)],
            Hit::Box(i) => {
                let b = &self.boxes[i];
                std::iter::once(&b.label).chain(&b.groups).map(|s| normalize_text(s)).collect()
            }
        }
    }
}

/// Pixel share of every concept seen by one rendering.
pub fn concept_shares(spec: &SceneSpec, rendering: &Rendering) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<(Hit, Option<usize>), usize> = BTreeMap::new();
    for (h, r) in rendering.hits.iter().zip(&rendering.regions) {
        *counts.entry((*h, *r)).or_default() += 1;
    }
    let total = rendering.hits.len() as f64;
    let mut shares = BTreeMap::new();
    for ((hit, region), n) in counts {
        let share = n as f64 / total;
        for c in spec.pixel_concepts(hit) {
            *shares.entry(c).or_insert(0.0) += share;
        }
        if let (Hit::Box(_), Some(f)) = (hit, region) {
            if spec.region_context > 0.0 {
                *shares.entry(normalize_text(&spec.floors[f].label)).or_insert(0.0) += spec.region_context * share;
            }
        }
    }
    shares
}

/// Answers mask requests with exact instance masks from the renderings.
///
/// A label naming a group yields one mask covering all member boxes; a box
/// label yields one mask per visible box. Masks smaller than `min_pixels`
/// are dropped.
#[derive(Clone, Debug)]
pub struct SyntheticOracle {
    spec: SceneSpec,
    renderings: Vec<Rendering>,
    pub min_pixels: usize,
}

impl SyntheticOracle {
    pub fn from_spec(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let geometry = spec.geometry();
        let k = spec.intrinsics();
        let renderings = spec
            .poses()?
            .iter()
            .map(|pose| geometry.render(pose, &k, spec.height, spec.width))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            renderings,
            min_pixels: DEFAULT_MIN_MASK_PIXELS,
        })
    }

    pub fn rendering(&self, keyframe_id: u64) -> Option<&Rendering> {
        self.renderings.get(keyframe_id as usize)
    }

    fn mask_where(&self, rendering: &Rendering, pred: impl Fn(usize) -> bool) -> BinaryMask {
        let mut m = BinaryMask::new(self.spec.height, self.spec.width);
        for (i, h) in rendering.hits.iter().enumerate() {
            if let Hit::Box(b) = h {
                if pred(*b) {
                    m.set(i % self.spec.width, i / self.spec.width, true);
                }
            }
        }
        m
    }
}

impl MaskOracle for SyntheticOracle {
    fn masks(&mut self, keyframe_id: u64, query_text: &str) -> Result<Vec<BinaryMask>> {
        let rendering = self
            .rendering(keyframe_id)
            .ok_or_else(|| Error::Oracle(format!("unknown keyframe {keyframe_id}")))?;
        let key = normalize_text(query_text);
        let boxes = &self.spec.boxes;
        let in_group = |b: usize| boxes[b].groups.iter().any(|g| normalize_text(g) == key);
        let masks = if (0..boxes.len()).any(in_group) {
            vec![self.mask_where(rendering, in_group)]
        } else {
            (0..boxes.len())
                .filter(|&b| normalize_text(&boxes[b].label) == key)
                .map(|b| self.mask_where(rendering, |x| x == b))
                .collect()
        };
        Ok(masks.into_iter().filter(|m| m.count() >= self.min_pixels).collect())
    }
}

/// Everything generated for one scene.
#[derive(Clone, Debug)]
pub struct SyntheticSession {
    pub spec: SceneSpec,
    pub packets: Vec<FramePacket>,
    pub codebook: Codebook,
    pub truth: GroundTruth,
    pub oracle: SyntheticOracle,
}

impl SyntheticSession {
    pub fn build(spec: &SceneSpec) -> Result<Self> {
        let oracle = SyntheticOracle::from_spec(spec)?;
        let codebook = spec.codebook();
        let poses = spec.poses()?;
        let k = spec.intrinsics();

        let mut visible = vec![0usize; spec.boxes.len()];
        for r in &oracle.renderings {
            for h in &r.hits {
                if let Hit::Box(b) = h {
                    visible[*b] += 1;
                }
            }
        }
        let hidden: BTreeSet<&str> = spec
            .boxes
            .iter()
            .zip(&visible)
            .filter(|(_, n)| **n == 0)
            .map(|(b, _)| b.label.as_str())
            .collect();
        if !hidden.is_empty() {
            return Err(Error::Scene(format!(
                "objects never visible from any camera: {}",
                hidden.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }

        let sigma = spec.embedding_noise / (spec.dim as f64).sqrt();
        let mut packets = Vec::with_capacity(poses.len());
        for (i, (pose, r)) in poses.iter().zip(&oracle.renderings).enumerate() {
            let mut e = vec![0.0; spec.dim];
            for (concept, share) in concept_shares(spec, r) {
                for (x, c) in e.iter_mut().zip(&codebook.vectors[&concept]) {
                    *x += share * c;
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            for x in e.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += sigma * z;
            }
            let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            packets.push(FramePacket {
                keyframe_id: i as u64,
                timestamp: i as f64 * 0.1,
                pose: *pose,
                intrinsics: k,
                height: spec.height,
                width: spec.width,
                depth: r.depth.iter().map(|&d| d as f32).collect(),
                depth_confidence: r.hits.iter().map(|h| if *h == Hit::Miss { 0.0 } else { 1.0 }).collect(),
                ground_mask: r.hits.iter().map(|h| u8::from(matches!(h, Hit::Floor(_)))).collect(),
                embedding: e.iter().map(|x| (x / n) as f32).collect(),
            });
        }

        let solids = spec.geometry().boxes;
        let mut objects: Vec<TruthObject> = spec
            .boxes
            .iter()
            .zip(&solids)
            .zip(&visible)
            .map(|((b, s), &n)| TruthObject {
                label: normalize_text(&b.label),
                bbox: OrientedBBox::new(s.center, s.rotation, s.half_extents),
                members: Vec::new(),
                visible_pixels: n,
            })
            .collect();
        let groups: BTreeSet<String> = spec.boxes.iter().flat_map(|b| b.groups.iter().map(|g| normalize_text(g))).collect();
        for g in groups {
            let members: Vec<usize> = (0..spec.boxes.len())
                .filter(|&i| spec.boxes[i].groups.iter().any(|x| normalize_text(x) == g))
                .collect();
            let corners: Vec<Vec3> = members.iter().flat_map(|&i| solids[i].corners()).collect();
            objects.push(TruthObject {
                label: g,
                bbox: enclosing_aabb(&corners),
                visible_pixels: members.iter().map(|&i| visible[i]).sum(),
                members,
            });
        }
        let truth = GroundTruth {
            objects,
            regions: spec
                .floors
                .iter()
                .map(|f| TruthRegion {
                    label: normalize_text(&f.label),
                    z: f.z,
                    polygon: f.polygon.clone(),
                })
                .collect(),
        };
        Ok(Self {
            spec: spec.clone(),
            packets,
            codebook,
            truth,
            oracle,
        })
    }

    /// Writes manifest, packet records, codebook, ground truth and the scene spec.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let s = &self.spec;
        let session = SessionDir::create(dir, Manifest::new(s.height, s.width, s.dim, s.submap_size))?;
        for p in &self.packets {
            session.write_packet(p)?;
        }
        self.codebook.save(dir.join(crate::engine::CODEBOOK_FILE))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        write(TRUTH_FILE, serde_json::to_string_pretty(&self.truth)?)?;
        write(SCENE_FILE, s.to_json()?)
    }
}

/// Builds a session for `spec` and writes it to `dir`.
pub fn generate_session(spec: &SceneSpec, dir: impl AsRef<Path>) -> Result<SyntheticSession> {
    let session = SyntheticSession::build(spec)?;
    session.write(dir)?;
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(floor: bool, boxes: Vec<BoxSpec>) -> SceneSpec {
        SceneSpec {
            seed: 3,
            height: 24,
            width: 32,
            dim: 16,
            hfov_deg: 80.0,
            embedding_noise: 0.05,
            submap_size: 4,
            region_context: 0.0,
            floors: if floor {
                vec![FloorSpec {
                    label: "Room".into(),
                    z: 0.0,
                    polygon: vec![[-3.0, -3.0], [3.0, -3.0], [3.0, 3.0], [-3.0, 3.0]],
                }]
            } else {
                vec![]
            },
            boxes,
            cameras: vec![CameraSpec {
                eye: [-2.0, 0.0, 1.5],
                target: [0.0, 0.0, 0.0],
            }],
            extra_concepts: vec!["giraffe".into()],
        }
    }

    fn cube(label: &str, x: f64) -> BoxSpec {
        BoxSpec {
            label: label.into(),
            center: [x, 0.0, 0.25],
            half_extents: [0.25; 3],
            yaw_deg: 0.0,
            groups: vec!["pair".into()],
        }
    }

    #[test]
    fn empty_scene_single_packet() {
        let s = SyntheticSession::build(&tiny(false, vec![])).unwrap();
        assert_eq!(s.packets.len(), 1);
        assert!(s.packets[0].ground_mask.iter().all(|&g| g == 0));
        assert!(s.packets[0].depth_confidence.iter().all(|&c| c == 0.0));
        s.packets[0].validate().unwrap();
    }

    #[test]
    fn codebook_orthonormal() {
        let spec = tiny(true, vec![cube("box", 0.0)]);
        let book = spec.codebook();
        assert_eq!(book.vectors.len(), 5);
        let vs: Vec<&Vec<f64>> = book.vectors.values().collect();
        for (i, a) in vs.iter().enumerate() {
            for (j, b) in vs.iter().enumerate() {
                let d: f64 = a.iter().zip(*b).map(|(x, y)| x * y).sum();
                assert!((d - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn only_floor_in_view_embeds_near_concept() {
        let mut spec = tiny(true, vec![]);
        spec.cameras[0] = CameraSpec {
            eye: [0.0, 0.0, 1.0],
            target: [0.5, 0.0, 0.0],
        };
        spec.embedding_noise = 0.1;
        let s = SyntheticSession::build(&spec).unwrap();
        let shares = concept_shares(&spec, &s.oracle.renderings[0]);
        assert_eq!(shares.keys().collect::<Vec<_>>(), vec!["room"]);
        let e = s.packets[0].unit_embedding();
        let c = &s.codebook.vectors["room"];
        let cos: f64 = e.iter().zip(c).map(|(a, b)| a * b).sum();
        assert!(cos >= 1.0 - 3.0 * spec.embedding_noise, "{cos}");
    }

    #[test]
    fn hidden_object_is_an_error() {
        let spec = tiny(true, vec![cube("box", 0.0), cube("ghost", 40.0)]);
        let err = SyntheticSession::build(&spec).unwrap_err().to_string();
        assert!(err.contains("ghost") && !err.contains("box,"), "{err}");
    }

    #[test]
    fn oracle_instances_and_groups() {
        let spec = tiny(true, vec![cube("box", 0.0), cube("box", 1.0)]);
        let mut s = SyntheticSession::build(&spec).unwrap();
        let each = s.oracle.masks(0, "Box").unwrap();
        assert_eq!(each.len(), 2);
        let pair = s.oracle.masks(0, "pair").unwrap();
        assert_eq!(pair.len(), 1);
        assert_eq!(pair[0].count(), each.iter().map(BinaryMask::count).sum::<usize>());
        assert!(s.oracle.masks(0, "giraffe").unwrap().is_empty());
        assert!(s.oracle.masks(9, "box").is_err());
        let group = s.truth.boxes_labeled("pair");
        assert_eq!(group.len(), 1);
        assert!((group[0].half_extents - Vec3::new(0.75, 0.25, 0.25)).norm() < 1e-12);
    }

    #[test]
    fn generation_is_byte_identical() {
        let spec = tiny(true, vec![cube("box", 0.0)]);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_session(&spec, a.path()).unwrap();
        generate_session(&spec, b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 5);
        for n in names {
            assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        }
    }
}
