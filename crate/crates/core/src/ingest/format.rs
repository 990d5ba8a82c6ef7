//! On-disk frame-packet session container.
//!
//! A session directory holds a text manifest (`manifest.txt`, `key = value`
//! lines with `version`, `H`, `W`, `D`, `S`) and one little-endian binary record
//! per keyframe named `{keyframe_id:08}.fpk`:
//!
//! ```text
//! keyframe_id u64 | timestamp f64 | pose 16×f64 row-major | intrinsics 4×f64 (fx fy cx cy)
//! depth H·W×f32 | depth_confidence H·W×f32 | ground_mask H·W×u8 | embedding D×f32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, RigidTransform};

use super::FramePacket;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 8 + 8 + 16 * 8 + 4 * 8;

const EMBEDDING_NORM_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub submap_size: usize,
}

impl Manifest {
    pub fn new(height: usize, width: usize, dim: usize, submap_size: usize) -> Self {
        Self {
            version: FORMAT_VERSION,
            height,
            width,
            dim,
            submap_size,
        }
    }

    pub fn record_len(&self) -> usize {
        let px = self.height * self.width;
        HEADER_BYTES + px * 4 + px * 4 + px + self.dim * 4
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut version, mut h, mut w, mut d, mut s) = (None, None, None, None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Manifest(format!("line {}: expected key = value", lineno + 1)))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::Manifest(format!("line {}: value is not an integer", lineno + 1)))?;
            match key.trim() {
                "version" => version = Some(value),
                "H" => h = Some(value),
                "W" => w = Some(value),
                "D" => d = Some(value),
                "S" => s = Some(value),
                other => return Err(Error::Manifest(format!("unknown key {other:?}"))),
            }
        }
        let need = |v: Option<usize>, k: &str| v.ok_or_else(|| Error::Manifest(format!("missing key {k}")));
        let version = need(version, "version")? as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Manifest(format!("unsupported version {version}")));
        }
        let m = Manifest {
            version,
            height: need(h, "H")?,
            width: need(w, "W")?,
            dim: need(d, "D")?,
            submap_size: need(s, "S")?,
        };
        if m.height == 0 || m.width == 0 || m.dim == 0 || m.submap_size == 0 {
            return Err(Error::Manifest("H, W, D and S must be positive".into()));
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        format!(
            "version = {}\nH = {}\nW = {}\nD = {}\nS = {}\n",
            self.version, self.height, self.width, self.dim, self.submap_size
        )
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }

    fn f32s(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| f32::from_le_bytes(self.take())).collect()
    }

    fn bytes(&mut self, n: usize) -> Vec<u8> {
        let out = self.buf[self.pos..self.pos + n].to_vec();
        self.pos += n;
        out
    }
}

/// Decodes and validates one binary record against the session manifest.
pub fn parse_frame_packet(record: &[u8], manifest: &Manifest) -> Result<FramePacket> {
    if record.len() < HEADER_BYTES {
        return Err(Error::packet(
            "header",
            format!("record is {} bytes, header needs {HEADER_BYTES}", record.len()),
        ));
    }
    if record.len() != manifest.record_len() {
        return Err(Error::packet(
            "dimensions",
            format!(
                "record is {} bytes, manifest H={} W={} D={} implies {}",
                record.len(),
                manifest.height,
                manifest.width,
                manifest.dim,
                manifest.record_len()
            ),
        ));
    }
    let mut r = Reader { buf: record, pos: 0 };
    let keyframe_id = r.u64();
    let timestamp = r.f64();
    let pose_vals: Vec<f64> = (0..16).map(|_| r.f64()).collect();
    let intr: Vec<f64> = (0..4).map(|_| r.f64()).collect();
    let px = manifest.height * manifest.width;
    let depth = r.f32s(px);
    let depth_confidence = r.f32s(px);
    let ground_mask = r.bytes(px);
    let embedding = r.f32s(manifest.dim);

    let packet = FramePacket {
        keyframe_id,
        timestamp,
        pose: RigidTransform::from_row_major(&pose_vals)
            .map_err(|e| Error::packet("pose", e.to_string()))?,
        intrinsics: Intrinsics::new(intr[0], intr[1], intr[2], intr[3]),
        height: manifest.height,
        width: manifest.width,
        depth,
        depth_confidence,
        ground_mask,
        embedding,
    };
    packet.validate()?;
    Ok(packet)
}

pub fn write_frame_packet(packet: &FramePacket) -> Vec<u8> {
    let px = packet.height * packet.width;
    let mut out = Vec::with_capacity(HEADER_BYTES + px * 9 + packet.embedding.len() * 4);
    out.extend_from_slice(&packet.keyframe_id.to_le_bytes());
    out.extend_from_slice(&packet.timestamp.to_le_bytes());
    for v in packet.pose.to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let k = &packet.intrinsics;
    for v in [k.fx, k.fy, k.cx, k.cy] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &packet.depth {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &packet.depth_confidence {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&packet.ground_mask);
    for v in &packet.embedding {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

impl FramePacket {
    /// Field-level validation shared by the parser and in-memory producers.
    pub fn validate(&self) -> Result<()> {
        let px = self.height * self.width;
        if !self.timestamp.is_finite() {
            return Err(Error::packet("timestamp", "non-finite"));
        }
        let k = &self.intrinsics;
        if ![k.fx, k.fy, k.cx, k.cy].iter().all(|v| v.is_finite()) || k.fx <= 0.0 || k.fy <= 0.0 {
            return Err(Error::packet("intrinsics", "focal lengths must be finite and positive"));
        }
        if self.depth.len() != px {
            return Err(Error::packet("depth", format!("expected {px} values, got {}", self.depth.len())));
        }
        if let Some(bad) = self.depth.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::packet("depth", format!("invalid value {bad}")));
        }
        if self.depth_confidence.len() != px {
            return Err(Error::packet("depth_confidence", "length mismatch"));
        }
        if let Some(bad) = self
            .depth_confidence
            .iter()
            .find(|c| !c.is_finite() || **c < 0.0 || **c > 1.0)
        {
            return Err(Error::packet("depth_confidence", format!("value {bad} outside [0, 1]")));
        }
        if self.ground_mask.len() != px {
            return Err(Error::packet("ground_mask", "length mismatch"));
        }
        if let Some(bad) = self.ground_mask.iter().find(|&&m| m > 1) {
            return Err(Error::packet("ground_mask", format!("value {bad} is not 0/1")));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::packet("embedding", "non-finite value"));
        }
        let norm = self.embedding_norm();
        if norm == 0.0 {
            return Err(Error::packet("embedding", "degenerate embedding (zero norm)"));
        }
        if (norm - 1.0).abs() > EMBEDDING_NORM_TOL {
            return Err(Error::packet("embedding", format!("norm {norm:.6} is not within 1e-3 of unit")));
        }
        Ok(())
    }
}

/// File name of a keyframe record.
pub fn record_file_name(keyframe_id: u64) -> String {
    format!("{keyframe_id:08}.fpk")
}

/// A session directory on disk.
#[derive(Clone, Debug)]
pub struct SessionDir {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl SessionDir {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::parse(&text)?;
        Ok(Self { root, manifest })
    }

    pub fn create(root: impl AsRef<Path>, manifest: Manifest) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(Self { root, manifest })
    }

    /// Record paths sorted by file name (and therefore by keyframe id).
    pub fn record_paths(&self) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let p = entry.path();
            if p.extension().is_some_and(|x| x == "fpk") {
                paths.push(p);
            }
        }
        paths.sort();
        Ok(paths)
    }

    pub fn read_packet(&self, path: &Path) -> Result<FramePacket> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_frame_packet(&bytes, &self.manifest)
    }

    pub fn read_packets(&self) -> Result<Vec<FramePacket>> {
        self.record_paths()?
            .iter()
            .map(|p| self.read_packet(p))
            .collect()
    }

    pub fn write_packet(&self, packet: &FramePacket) -> Result<()> {
        if packet.height != self.manifest.height
            || packet.width != self.manifest.width
            || packet.embedding.len() != self.manifest.dim
        {
            return Err(Error::packet("dimensions", "packet does not match session manifest"));
        }
        let path = self.root.join(record_file_name(packet.keyframe_id));
        fs::write(&path, write_frame_packet(packet)).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(h: usize, w: usize, d: usize) -> FramePacket {
        let mut embedding = vec![0.0f32; d];
        embedding[0] = 1.0;
        FramePacket {
            keyframe_id: 3,
            timestamp: 0.5,
            pose: RigidTransform::identity(),
            intrinsics: Intrinsics::new(2.0, 2.0, 1.5, 1.5),
            height: h,
            width: w,
            depth: (0..h * w).map(|i| i as f32 * 0.1).collect(),
            depth_confidence: vec![1.0; h * w],
            ground_mask: (0..h * w).map(|i| (i % 2) as u8).collect(),
            embedding,
        }
    }

    #[test]
    fn roundtrip_4x4x8() {
        let m = Manifest::new(4, 4, 8, 16);
        let p = packet(4, 4, 8);
        let bytes = write_frame_packet(&p);
        assert_eq!(bytes.len(), m.record_len());
        let back = parse_frame_packet(&bytes, &m).unwrap();
        assert_eq!((back.height, back.width, back.embedding.len()), (4, 4, 8));
        assert_eq!(write_frame_packet(&back), bytes);
    }

    #[test]
    fn zero_embedding_is_degenerate() {
        let m = Manifest::new(4, 4, 8, 16);
        let mut p = packet(4, 4, 8);
        p.embedding = vec![0.0; 8];
        let err = parse_frame_packet(&write_frame_packet(&p), &m).unwrap_err();
        assert!(err.to_string().contains("degenerate embedding"), "{err}");
    }

    #[test]
    fn nan_depth_names_field() {
        let m = Manifest::new(4, 4, 8, 16);
        let mut p = packet(4, 4, 8);
        p.depth[5] = f32::NAN;
        let err = parse_frame_packet(&write_frame_packet(&p), &m).unwrap_err();
        assert!(matches!(err, Error::Packet { field: "depth", .. }), "{err}");
    }

    #[test]
    fn embedding_norm_band() {
        let m = Manifest::new(4, 4, 8, 16);
        let mut p = packet(4, 4, 8);
        p.embedding[0] = 1.0005;
        assert!(parse_frame_packet(&write_frame_packet(&p), &m).is_ok());
        p.embedding[0] = 1.01;
        let err = parse_frame_packet(&write_frame_packet(&p), &m).unwrap_err();
        assert!(matches!(err, Error::Packet { field: "embedding", .. }));
    }

    #[test]
    fn dimension_mismatch_against_manifest() {
        let p = packet(4, 4, 8);
        let err = parse_frame_packet(&write_frame_packet(&p), &Manifest::new(4, 4, 16, 16)).unwrap_err();
        assert!(matches!(err, Error::Packet { field: "dimensions", .. }));
        let err = parse_frame_packet(&[0u8; 10], &Manifest::new(4, 4, 8, 16)).unwrap_err();
        assert!(matches!(err, Error::Packet { field: "header", .. }));
    }

    #[test]
    fn bad_mask_and_pose() {
        let m = Manifest::new(4, 4, 8, 16);
        let mut p = packet(4, 4, 8);
        p.ground_mask[0] = 2;
        assert!(matches!(
            parse_frame_packet(&write_frame_packet(&p), &m).unwrap_err(),
            Error::Packet { field: "ground_mask", .. }
        ));
        let mut bytes = write_frame_packet(&packet(4, 4, 8));
        // scale the (0,0) rotation entry
        bytes[16..24].copy_from_slice(&2.0f64.to_le_bytes());
        assert!(matches!(
            parse_frame_packet(&bytes, &m).unwrap_err(),
            Error::Packet { field: "pose", .. }
        ));
    }

    #[test]
    fn manifest_parse() {
        let m = Manifest::parse("# session\nversion = 1\nH=64\nW: 48\nD = 64\nS = 16\n").unwrap();
        assert_eq!(m, Manifest::new(64, 48, 64, 16));
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("version = 1\nH = 4\n").is_err());
        assert!(Manifest::parse("version = 2\nH = 4\nW = 4\nD = 4\nS = 4\n").is_err());
    }
}
