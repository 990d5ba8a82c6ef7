//! Ground truth emitted with a synthetic session, and region scoring against it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::objects::OrientedBBox;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub label: String,
    pub bbox: OrientedBBox,
    /// Indices of member boxes for a group object; empty for a single box.
    #[serde(default)]
    pub members: Vec<usize>,
    /// Pixels over all cameras where this object is the first hit.
    pub visible_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRegion {
    pub label: String,
    pub z: f64,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub objects: Vec<TruthObject>,
    pub regions: Vec<TruthRegion>,
}

impl GroundTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn boxes_labeled(&self, label: &str) -> Vec<OrientedBBox> {
        let key = crate::memory::normalize_text(label);
        self.objects.iter().filter(|o| o.label == key).map(|o| o.bbox).collect()
    }

    /// Label of the floor region whose polygon contains `p` in xy.
    pub fn region_at(&self, p: &Vec3) -> Option<&str> {
        self.regions
            .iter()
            .find(|r| {
                super::raycast::FloorPolygon {
                    z: r.z,
                    vertices: r.polygon.clone(),
                }
                .contains_xy(p.x, p.y)
            })
            .map(|r| r.label.as_str())
    }

    /// Whether `p` lies on some floor and no single-box obstacle starting below
    /// `clearance` above that floor covers it.
    pub fn traversable(&self, p: &Vec3, clearance: f64) -> bool {
        let Some(region) = self.regions.iter().find(|r| {
            super::raycast::FloorPolygon {
                z: r.z,
                vertices: r.polygon.clone(),
            }
            .contains_xy(p.x, p.y)
        }) else {
            return false;
        };
        !self.objects.iter().filter(|o| o.members.is_empty()).any(|o| {
            let (lo, _) = o.bbox.aabb();
            let footprint = Vec3::new(p.x, p.y, o.bbox.center.z);
            lo.z - region.z < clearance && o.bbox.contains(&footprint)
        })
    }
}

/// Axis-aligned box over a set of corner points.
pub fn enclosing_aabb<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> OrientedBBox {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    OrientedBBox::new((lo + hi) / 2.0, Mat3::identity(), (hi - lo) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub precision: f64,
    pub recall: f64,
    pub predicted: usize,
    pub actual: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEvaluation {
    pub per_label: BTreeMap<String, LabelScore>,
    /// Fraction of truth-labeled places whose predicted label equals the truth.
    pub accuracy: f64,
    pub places: usize,
}

impl RegionEvaluation {
    /// `(precision, recall, accuracy)` for one label.
    pub fn summary(&self, label: &str) -> (f64, f64, f64) {
        self.per_label
            .get(label)
            .map_or((0.0, 0.0, self.accuracy), |s| (s.precision, s.recall, self.accuracy))
    }
}

/// Place-level precision and recall per label, and semantic accuracy.
///
/// Only places present in `truth` are scored. A label never predicted has
/// precision 0; a label absent from the truth has recall 0.
pub fn evaluate_regions(predicted: &BTreeMap<u64, String>, truth: &BTreeMap<u64, String>) -> RegionEvaluation {
    let labels: BTreeSet<&String> = truth.values().chain(predicted.values()).collect();
    let mut per_label = BTreeMap::new();
    for label in labels {
        let mut tp = 0;
        let mut pred = 0;
        let mut actual = 0;
        for (id, t) in truth {
            let p = predicted.get(id);
            let is_pred = p == Some(label);
            let is_true = t == label;
            pred += usize::from(is_pred);
            actual += usize::from(is_true);
            tp += usize::from(is_pred && is_true);
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        per_label.insert(
            label.clone(),
            LabelScore {
                precision: ratio(tp, pred),
                recall: ratio(tp, actual),
                predicted: pred,
                actual,
            },
        );
    }
    let correct = truth.iter().filter(|(id, t)| predicted.get(id) == Some(t)).count();
    RegionEvaluation {
        per_label,
        accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
        places: truth.len(),
    }
}
