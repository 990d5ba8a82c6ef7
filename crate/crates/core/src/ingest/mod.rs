//! Frame packets, submap assembly, depth back-projection and pose updates.

pub mod format;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PointCloud, RigidTransform, Vec3};
use crate::mask::BinaryMask;

pub use format::{parse_frame_packet, write_frame_packet, Manifest, SessionDir};

pub const DEFAULT_SUBMAP_SIZE: usize = 16;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

/// One keyframe's geometry and semantics.
///
/// `embedding` keeps the stored single-precision values so that a packet writes
/// back byte-identically; [`FramePacket::unit_embedding`] gives the renormalized vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePacket {
    pub keyframe_id: u64,
    pub timestamp: f64,
    /// World-from-camera.
    pub pose: RigidTransform,
    pub intrinsics: Intrinsics,
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f32>,
    pub depth_confidence: Vec<f32>,
    pub ground_mask: Vec<u8>,
    pub embedding: Vec<f32>,
}

impl FramePacket {
    pub fn embedding_norm(&self) -> f64 {
        self.embedding
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn unit_embedding(&self) -> Vec<f64> {
        let n = self.embedding_norm();
        self.embedding.iter().map(|&v| v as f64 / n).collect()
    }

    #[inline]
    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width + u]
    }

    pub fn ground(&self) -> BinaryMask {
        let data = self.ground_mask.iter().map(|&m| m == 1).collect();
        BinaryMask::from_vec(self.height, self.width, data).expect("validated dimensions")
    }

    pub fn non_ground(&self) -> BinaryMask {
        let data = self.ground_mask.iter().map(|&m| m == 0).collect();
        BinaryMask::from_vec(self.height, self.width, data).expect("validated dimensions")
    }
}

/// Back-projects masked, confident, positive-depth pixels through the packet's own pose.
pub fn backproject(packet: &FramePacket, mask: &BinaryMask, confidence_threshold: f64) -> Result<PointCloud> {
    backproject_with_pose(packet, &packet.pose, mask, confidence_threshold)
}

/// Back-projection through an explicit world-from-camera pose (e.g. the packet pose
/// composed with its submap correction).
pub fn backproject_with_pose(
    packet: &FramePacket,
    pose: &RigidTransform,
    mask: &BinaryMask,
    confidence_threshold: f64,
) -> Result<PointCloud> {
    if mask.height() != packet.height || mask.width() != packet.width {
        return Err(Error::Dimension {
            what: "mask",
            expected: packet.height * packet.width,
            got: mask.height() * mask.width(),
        });
    }
    let r = pose.rotation();
    let t = pose.translation();
    let mut cloud = PointCloud::new();
    for v in 0..packet.height {
        for u in 0..packet.width {
            let idx = v * packet.width + u;
            if !mask.as_slice()[idx] {
                continue;
            }
            let d = packet.depth[idx] as f64;
            if d <= 0.0 || (packet.depth_confidence[idx] as f64) < confidence_threshold {
                continue;
            }
            let cam = packet.intrinsics.unproject(u as f64, v as f64, d);
            cloud.push(r * cam + t, Some(packet.keyframe_id));
        }
    }
    Ok(cloud)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submap {
    pub submap_id: u64,
    pub keyframe_ids: Vec<u64>,
    pub base_transform: RigidTransform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseUpdateEvent {
    pub submap_id: u64,
    /// Pre-composed onto the submap's base transform.
    pub transform: RigidTransform,
}

/// Keyframe records and their submap membership.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FrameStore {
    submaps: Vec<Submap>,
    keyframe_submap: BTreeMap<u64, u64>,
    #[serde(skip)]
    packets: BTreeMap<u64, FramePacket>,
    dims: Option<(usize, usize, usize)>,
}

impl FrameStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a batch of at most `submap_size` keyframes as a new submap.
    pub fn assemble_submap(&mut self, packets: Vec<FramePacket>, submap_size: usize) -> Result<&Submap> {
        if packets.is_empty() {
            return Err(Error::Batch("empty batch".into()));
        }
        if packets.len() > submap_size {
            return Err(Error::Batch(format!(
                "{} packets exceed submap size {submap_size}",
                packets.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &packets {
            if self.keyframe_submap.contains_key(&p.keyframe_id) || !seen.insert(p.keyframe_id) {
                return Err(Error::DuplicateKeyframe(p.keyframe_id));
            }
            let dims = (p.height, p.width, p.embedding.len());
            match self.dims {
                Some(expected) if expected != dims => {
                    return Err(Error::packet("dimensions", format!("{dims:?} differs from session {expected:?}")));
                }
                _ => self.dims = Some(dims),
            }
        }
        let submap_id = self.submaps.len() as u64;
        let keyframe_ids: Vec<u64> = packets.iter().map(|p| p.keyframe_id).collect();
        for p in packets {
            self.keyframe_submap.insert(p.keyframe_id, submap_id);
            self.packets.insert(p.keyframe_id, p);
        }
        self.submaps.push(Submap {
            submap_id,
            keyframe_ids,
            base_transform: RigidTransform::identity(),
        });
        Ok(self.submaps.last().expect("just pushed"))
    }

    /// Re-attaches packet payloads after deserializing a store snapshot.
    pub fn restore_packets(&mut self, packets: Vec<FramePacket>) -> Result<()> {
        for p in packets {
            if !self.keyframe_submap.contains_key(&p.keyframe_id) {
                return Err(Error::UnknownKeyframe(p.keyframe_id));
            }
            self.packets.insert(p.keyframe_id, p);
        }
        Ok(())
    }

    pub fn apply_pose_update(&mut self, event: &PoseUpdateEvent) -> Result<()> {
        let sm = self
            .submaps
            .get_mut(event.submap_id as usize)
            .ok_or(Error::UnknownSubmap(event.submap_id))?;
        sm.base_transform = event.transform.compose(&sm.base_transform);
        Ok(())
    }

    pub fn submaps(&self) -> &[Submap] {
        &self.submaps
    }

    pub fn submap(&self, id: u64) -> Result<&Submap> {
        self.submaps.get(id as usize).ok_or(Error::UnknownSubmap(id))
    }

    pub fn submap_of(&self, keyframe_id: u64) -> Result<u64> {
        self.keyframe_submap
            .get(&keyframe_id)
            .copied()
            .ok_or(Error::UnknownKeyframe(keyframe_id))
    }

    pub fn packet(&self, keyframe_id: u64) -> Result<&FramePacket> {
        self.packets
            .get(&keyframe_id)
            .ok_or(Error::UnknownKeyframe(keyframe_id))
    }

    pub fn packets(&self) -> impl Iterator<Item = &FramePacket> {
        self.packets.values()
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframe_submap.len()
    }

    pub fn contains(&self, keyframe_id: u64) -> bool {
        self.keyframe_submap.contains_key(&keyframe_id)
    }

    /// World-from-camera pose including the submap correction.
    pub fn world_pose(&self, keyframe_id: u64) -> Result<RigidTransform> {
        let p = self.packet(keyframe_id)?;
        let sm = self.submap(self.submap_of(keyframe_id)?)?;
        Ok(sm.base_transform.compose(&p.pose))
    }

    pub fn camera_center(&self, keyframe_id: u64) -> Result<Vec3> {
        Ok(self.world_pose(keyframe_id)?.translation())
    }
}
