use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde_json::Value;

use super::{GeoError, Label};

/// Closed list of world-coordinate vertices (first == last).
pub type Ring = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct FootprintEntry {
    pub rooftop_id: String,
    /// Exterior ring first, then holes.
    pub rings: Vec<Ring>,
    /// Optional `label` property carried through from the source feature.
    pub label: Option<Label>,
}

impl FootprintEntry {
    /// World-coordinate bounding box `(min_x, min_y, max_x, max_y)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in self.rings.iter().flatten() {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FootprintSet {
    pub entries: Vec<FootprintEntry>,
}

impl FootprintSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FootprintEntry> {
        self.entries.iter().find(|e| e.rooftop_id == id)
    }

    /// Serializes back to a GeoJSON FeatureCollection (one Polygon per entry).
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .entries
            .iter()
            .map(|e| {
                let mut props = serde_json::Map::new();
                props.insert("rooftop_id".into(), Value::from(e.rooftop_id.clone()));
                if let Some(l) = e.label {
                    props.insert("label".into(), Value::from(l.as_str()));
                }
                let coords: Vec<Value> = e
                    .rings
                    .iter()
                    .map(|r| Value::Array(r.iter().map(|&(x, y)| serde_json::json!([x, y])).collect()))
                    .collect();
                serde_json::json!({
                    "type": "Feature",
                    "properties": props,
                    "geometry": {"type": "Polygon", "coordinates": coords},
                })
            })
            .collect();
        serde_json::json!({"type": "FeatureCollection", "features": features})
    }
}

pub fn load_footprints(path: &Path) -> Result<FootprintSet, GeoError> {
    let text = fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
    parse_footprints(&text)
}

/// Parses a GeoJSON FeatureCollection of Polygon / MultiPolygon features.
///
/// The id comes from the `rooftop_id` property, falling back to the feature's
/// top-level `id`. MultiPolygon parts become separate entries `id#0`, `id#1`, ….
pub fn parse_footprints(text: &str) -> Result<FootprintSet, GeoError> {
    let root: Value = serde_json::from_str(text).map_err(|e| GeoError::Json(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoError::Json("expected a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoError::Json("missing features array".into()))?;

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, feat) in features.iter().enumerate() {
        let id = feature_id(feat).ok_or(GeoError::MissingId(i))?;
        let label = match feat.pointer("/properties/label").and_then(Value::as_str) {
            Some(s) => Some(s.parse::<Label>()?),
            None => None,
        };
        let geom = feat
            .get("geometry")
            .ok_or_else(|| GeoError::Json(format!("feature {id} has no geometry")))?;
        let kind = geom.get("type").and_then(Value::as_str).unwrap_or("null");
        let coords = geom.get("coordinates");
        let polygons: Vec<(String, &Value)> = match (kind, coords) {
            ("Polygon", Some(c)) => vec![(id.clone(), c)],
            ("MultiPolygon", Some(Value::Array(parts))) => parts
                .iter()
                .enumerate()
                .map(|(k, p)| (format!("{id}#{k}"), p))
                .collect(),
            _ => {
                return Err(GeoError::UnsupportedGeometry {
                    id,
                    kind: kind.to_string(),
                });
            }
        };
        for (pid, poly) in polygons {
            let rings = parse_polygon(&pid, poly)?;
            if !seen.insert(pid.clone()) {
                return Err(GeoError::DuplicateId(pid));
            }
            entries.push(FootprintEntry {
                rooftop_id: pid,
                rings,
                label,
            });
        }
    }
    Ok(FootprintSet { entries })
}

fn feature_id(feat: &Value) -> Option<String> {
    let v = feat
        .pointer("/properties/rooftop_id")
        .filter(|v| !v.is_null())
        .or_else(|| feat.get("id").filter(|v| !v.is_null()))?;
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_polygon(id: &str, poly: &Value) -> Result<Vec<Ring>, GeoError> {
    let rings = poly
        .as_array()
        .ok_or_else(|| GeoError::Json(format!("{id}: polygon is not an array")))?;
    if rings.is_empty() {
        return Err(GeoError::TooFewVertices(id.to_string()));
    }
    rings
        .iter()
        .map(|r| {
            let ring = parse_ring(id, r)?;
            validate_ring(id, &ring)?;
            Ok(ring)
        })
        .collect()
}

fn parse_ring(id: &str, ring: &Value) -> Result<Ring, GeoError> {
    let pts = ring
        .as_array()
        .ok_or_else(|| GeoError::Json(format!("{id}: ring is not an array")))?;
    pts.iter()
        .map(|p| {
            let x = p.get(0).and_then(Value::as_f64);
            let y = p.get(1).and_then(Value::as_f64);
            match (x, y) {
                (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Ok((x, y)),
                _ => Err(GeoError::Json(format!("{id}: bad coordinate {p}"))),
            }
        })
        .collect()
}

pub(crate) fn validate_ring(id: &str, ring: &Ring) -> Result<(), GeoError> {
    if ring.len() < 4 {
        return Err(GeoError::TooFewVertices(id.to_string()));
    }
    if ring.first() != ring.last() {
        return Err(GeoError::UnclosedRing(id.to_string()));
    }
    if self_intersects(ring) {
        return Err(GeoError::SelfIntersecting(id.to_string()));
    }
    Ok(())
}

/// Pairwise test over non-adjacent edges of a closed ring.
fn self_intersects(ring: &Ring) -> bool {
    let n = ring.len() - 1;
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_box(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_box(q1, q2, p1))
        || (d2 == 0.0 && on_box(q1, q2, p2))
        || (d3 == 0.0 && on_box(p1, p2, q1))
        || (d4 == 0.0 && on_box(p1, p2, q2))
}
