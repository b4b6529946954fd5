//! Planar approximation geometry at city scale: local projection,
//! point-to-street matching, point-in-region tests and cutting trips into
//! per-region slices. Also reads and writes the GeoJSON profile used for
//! street and region files.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::doc::FrameDoc;
use crate::types::StreetScene;

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default radius for street matching.
pub const DEFAULT_MATCH_RADIUS_M: f64 = 30.0;

/// Maximum coordinate difference accepted by [`local_project`].
pub const PROJECTION_WINDOW_DEG: f64 = 1.0;

/// Distances closer than this are considered tied when matching.
pub const MATCH_TIE_EPS_M: f64 = 1e-6;

const BOUNDARY_EPS_DEG: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate ({lat}, {lon}) out of range")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point {point} is more than 1 degree away from projection origin {origin}")]
    OutOfWindow { origin: LatLon, point: LatLon },
    #[error("feature {index}: {reason}")]
    BadFeature { index: usize, reason: String },
    #[error("malformed GeoJSON: {0}")]
    Json(String),
}

/// WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let ok = self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon);
        if ok {
            Ok(())
        } else {
            Err(GeoError::InvalidCoordinate {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

impl fmt::Display for LatLon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Axis-aligned lat/lon rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a LatLon>) -> Option<BBox> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox {
            min_lat: first.lat,
            min_lon: first.lon,
            max_lat: first.lat,
            max_lon: first.lon,
        };
        for p in it {
            b.min_lat = b.min_lat.min(p.lat);
            b.min_lon = b.min_lon.min(p.lon);
            b.max_lat = b.max_lat.max(p.lat);
            b.max_lon = b.max_lon.max(p.lon);
        }
        Some(b)
    }

    pub fn contains(&self, p: &LatLon) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }

    pub fn center(&self) -> LatLon {
        LatLon::new(
            (self.min_lat + self.max_lat) / 2.0,
            (self.min_lon + self.max_lon) / 2.0,
        )
    }

    pub fn is_valid(&self) -> bool {
        [self.min_lat, self.min_lon, self.max_lat, self.max_lon]
            .iter()
            .all(|v| v.is_finite())
            && self.min_lat < self.max_lat
            && self.min_lon < self.max_lon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreetSegment {
    pub segment_id: String,
    pub polyline: Vec<LatLon>,
    pub street_type: StreetScene,
}

impl StreetSegment {
    pub fn bbox(&self) -> BBox {
        BBox::of_points(&self.polyline).expect("segment has at least two points")
    }
}

/// Closed polygon: exterior ring plus holes. Rings repeat their first point.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Vec<LatLon>,
    pub holes: Vec<Vec<LatLon>>,
}

impl Polygon {
    pub fn rings(&self) -> impl Iterator<Item = &Vec<LatLon>> + Clone {
        std::iter::once(&self.exterior).chain(&self.holes)
    }
}

/// A zipcode region. Multi-part regions carry several polygons.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub region_id: String,
    pub polygons: Vec<Polygon>,
}

impl Region {
    pub fn bbox(&self) -> BBox {
        BBox::of_points(self.polygons.iter().flat_map(|p| &p.exterior))
            .expect("region has a non-empty exterior")
    }
}

/// Contiguous run `[start, end)` of trip frames inside one region, or
/// outside every region when `region_id` is `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripSlice {
    pub trip_id: String,
    pub region_id: Option<String>,
    pub start: usize,
    pub end: usize,
}

/// Equirectangular projection of `p` onto a plane tangent at `origin`.
/// Returns `(x east, y north)` in meters.
pub fn local_project(origin: LatLon, p: LatLon) -> Result<(f64, f64), GeoError> {
    if (p.lat - origin.lat).abs() >= PROJECTION_WINDOW_DEG
        || (p.lon - origin.lon).abs() >= PROJECTION_WINDOW_DEG
    {
        return Err(GeoError::OutOfWindow { origin, point: p });
    }
    Ok(project_unchecked(origin, p))
}

pub(crate) fn project_unchecked(origin: LatLon, p: LatLon) -> (f64, f64) {
    let x = EARTH_RADIUS_M * (p.lon - origin.lon).to_radians() * origin.lat.to_radians().cos();
    let y = EARTH_RADIUS_M * (p.lat - origin.lat).to_radians();
    (x, y)
}

/// Inverse of [`local_project`].
pub fn local_unproject(origin: LatLon, x: f64, y: f64) -> LatLon {
    let lat = origin.lat + (y / EARTH_RADIUS_M).to_degrees();
    let lon = origin.lon + (x / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    LatLon::new(lat, lon)
}

/// Distance from the origin of the plane to the edge `a`–`b`.
fn origin_edge_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        ((-a.0 * dx - a.1 * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    cx.hypot(cy)
}

/// Minimum planar distance in meters from `p` to any edge of the polyline,
/// measured in a local plane centered at `p`.
pub fn point_segment_distance(p: LatLon, seg: &StreetSegment) -> f64 {
    let pts: Vec<(f64, f64)> = seg
        .polyline
        .iter()
        .map(|q| project_unchecked(p, *q))
        .collect();
    match pts.as_slice() {
        [] => f64::INFINITY,
        [only] => only.0.hypot(only.1),
        _ => pts
            .windows(2)
            .map(|w| origin_edge_distance(w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetMatch {
    pub segment_id: String,
    pub distance_m: f64,
}

/// Nearest candidate within `max_dist` meters. Distances within
/// [`MATCH_TIE_EPS_M`] of the minimum are ties, resolved by the smallest
/// segment id.
pub fn match_point<'a>(
    p: LatLon,
    candidates: impl IntoIterator<Item = &'a StreetSegment>,
    max_dist: f64,
) -> Option<StreetMatch> {
    let scored: Vec<(&str, f64)> = candidates
        .into_iter()
        .map(|s| (s.segment_id.as_str(), point_segment_distance(p, s)))
        .filter(|(_, d)| *d <= max_dist)
        .collect();
    let min = scored.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    scored
        .into_iter()
        .filter(|(_, d)| *d <= min + MATCH_TIE_EPS_M)
        .min_by(|a, b| a.0.cmp(b.0).then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal)))
        .map(|(id, d)| StreetMatch {
            segment_id: id.to_string(),
            distance_m: d,
        })
}

fn on_edge(p: &LatLon, a: &LatLon, b: &LatLon) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    let len = (b.lon - a.lon).hypot(b.lat - a.lat);
    if cross.abs() > BOUNDARY_EPS_DEG * len.max(1.0) {
        return false;
    }
    p.lon >= a.lon.min(b.lon) - BOUNDARY_EPS_DEG
        && p.lon <= a.lon.max(b.lon) + BOUNDARY_EPS_DEG
        && p.lat >= a.lat.min(b.lat) - BOUNDARY_EPS_DEG
        && p.lat <= a.lat.max(b.lat) + BOUNDARY_EPS_DEG
}

/// True if `p` lies on some edge of `ring`.
pub fn on_ring_boundary(p: &LatLon, ring: &[LatLon]) -> bool {
    ring.windows(2).any(|w| on_edge(p, &w[0], &w[1]))
}

/// Even–odd crossing count of a ray cast from `p` toward +lon.
fn ray_crossings(p: &LatLon, ring: &[LatLon]) -> usize {
    ring.windows(2)
        .filter(|w| {
            let (a, b) = (&w[0], &w[1]);
            if (a.lat > p.lat) == (b.lat > p.lat) {
                return false;
            }
            let lon_at = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            p.lon < lon_at
        })
        .count()
}

/// Even–odd test over a bare ring list; boundary points count as inside.
pub fn point_in_rings<'a>(p: &LatLon, rings: impl IntoIterator<Item = &'a [LatLon]> + Clone) -> bool {
    if rings.clone().into_iter().any(|r| on_ring_boundary(p, r)) {
        return true;
    }
    rings.into_iter().map(|r| ray_crossings(p, r)).sum::<usize>() % 2 == 1
}

/// Even–odd ray casting over every ring of the region, so holes subtract.
/// Points on any ring count as inside.
pub fn point_in_region(p: &LatLon, r: &Region) -> bool {
    if !r.bbox().contains(p) {
        return false;
    }
    point_in_rings(
        p,
        r.polygons.iter().flat_map(|poly| poly.rings().map(Vec::as_slice)),
    )
}

/// First region, in ascending `region_id` order, containing `p`.
pub fn locate_region<'a>(p: &LatLon, sorted_regions: &'a [&'a Region]) -> Option<&'a Region> {
    sorted_regions.iter().copied().find(|r| point_in_region(p, r))
}

/// Regions sorted by id; the order [`assign_regions`] resolves overlaps in.
pub fn sorted_regions(regions: &[Region]) -> Vec<&Region> {
    let mut sorted: Vec<&Region> = regions.iter().collect();
    sorted.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    sorted
}

/// Assigns every frame to a region and groups consecutive frames with the
/// same assignment into maximal slices.
pub fn assign_regions(trip_id: &str, frames: &[FrameDoc], regions: &[Region]) -> Vec<TripSlice> {
    let sorted = sorted_regions(regions);
    let ids = frames
        .iter()
        .map(|f| locate_region(&f.location, &sorted).map(|r| r.region_id.clone()));
    slices_from_ids(trip_id, ids)
}

pub(crate) fn slices_from_ids(
    trip_id: &str,
    ids: impl IntoIterator<Item = Option<String>>,
) -> Vec<TripSlice> {
    let mut slices: Vec<TripSlice> = Vec::new();
    for (idx, id) in ids.into_iter().enumerate() {
        match slices.last_mut() {
            Some(last) if last.region_id == id => last.end = idx + 1,
            _ => slices.push(TripSlice {
                trip_id: trip_id.to_string(),
                region_id: id,
                start: idx,
                end: idx + 1,
            }),
        }
    }
    slices
}

// GeoJSON

#[derive(Deserialize)]
struct RawCollection {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<RawFeature>,
}

#[derive(Deserialize)]
struct RawFeature {
    #[serde(default)]
    properties: Option<Map<String, Value>>,
    geometry: Option<RawGeometry>,
}

#[derive(Deserialize)]
#[serde(tag = "type", content = "coordinates")]
enum RawGeometry {
    LineString(Vec<Vec<f64>>),
    Polygon(Vec<Vec<Vec<f64>>>),
    MultiPolygon(Vec<Vec<Vec<Vec<f64>>>>),
    #[serde(other)]
    Unsupported,
}

fn parse_collection(text: &str) -> Result<RawCollection, GeoError> {
    let fc: RawCollection = serde_json::from_str(text).map_err(|e| GeoError::Json(e.to_string()))?;
    if fc.kind != "FeatureCollection" {
        return Err(GeoError::Json(format!("expected FeatureCollection, got {}", fc.kind)));
    }
    Ok(fc)
}

fn position(index: usize, coords: &[f64]) -> Result<LatLon, GeoError> {
    match coords {
        [lon, lat, ..] => {
            let p = LatLon::new(*lat, *lon);
            p.validate().map_err(|e| GeoError::BadFeature {
                index,
                reason: e.to_string(),
            })?;
            Ok(p)
        }
        _ => Err(GeoError::BadFeature {
            index,
            reason: "position needs two numbers".into(),
        }),
    }
}

fn string_property(props: &Option<Map<String, Value>>, key: &str) -> Option<String> {
    match props.as_ref()?.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn ring(index: usize, coords: &[Vec<f64>]) -> Result<Vec<LatLon>, GeoError> {
    let pts = coords
        .iter()
        .map(|c| position(index, c))
        .collect::<Result<Vec<_>, _>>()?;
    if pts.len() < 4 || pts.first() != pts.last() {
        return Err(GeoError::BadFeature {
            index,
            reason: "ring must be closed with at least 4 points".into(),
        });
    }
    Ok(pts)
}

fn polygon(index: usize, rings: &[Vec<Vec<f64>>]) -> Result<Polygon, GeoError> {
    let mut parsed = rings
        .iter()
        .map(|r| ring(index, r))
        .collect::<Result<Vec<_>, _>>()?;
    if parsed.is_empty() {
        return Err(GeoError::BadFeature {
            index,
            reason: "polygon without rings".into(),
        });
    }
    let exterior = parsed.remove(0);
    Ok(Polygon {
        exterior,
        holes: parsed,
    })
}

/// Parses a streets FeatureCollection of LineString features with
/// `segment_id` and `street_type` properties.
pub fn parse_streets(text: &str) -> Result<Vec<StreetSegment>, GeoError> {
    let fc = parse_collection(text)?;
    let mut out: Vec<StreetSegment> = Vec::with_capacity(fc.features.len());
    let mut seen = std::collections::HashSet::new();
    for (index, f) in fc.features.into_iter().enumerate() {
        let bad = |reason: &str| GeoError::BadFeature {
            index,
            reason: reason.to_string(),
        };
        let segment_id = string_property(&f.properties, "segment_id")
            .ok_or_else(|| bad("missing segment_id"))?;
        if !seen.insert(segment_id.clone()) {
            return Err(bad(&format!("duplicate segment_id {segment_id:?}")));
        }
        let street_type = string_property(&f.properties, "street_type")
            .map(|s| StreetScene::parse_lenient(&s))
            .unwrap_or(StreetScene::Undefined);
        let coords = match f.geometry {
            Some(RawGeometry::LineString(c)) => c,
            _ => return Err(bad("expected LineString geometry")),
        };
        let mut polyline = coords
            .iter()
            .map(|c| position(index, c))
            .collect::<Result<Vec<_>, _>>()?;
        polyline.dedup();
        if polyline.len() < 2 {
            return Err(bad("polyline needs two distinct points"));
        }
        out.push(StreetSegment {
            segment_id,
            polyline,
            street_type,
        });
    }
    Ok(out)
}

/// Parses a regions FeatureCollection of Polygon or MultiPolygon features
/// with a `region_id` property.
pub fn parse_regions(text: &str) -> Result<Vec<Region>, GeoError> {
    let fc = parse_collection(text)?;
    let mut out = Vec::with_capacity(fc.features.len());
    let mut seen = std::collections::HashSet::new();
    for (index, f) in fc.features.into_iter().enumerate() {
        let bad = |reason: String| GeoError::BadFeature { index, reason };
        let region_id = string_property(&f.properties, "region_id")
            .ok_or_else(|| bad("missing region_id".into()))?;
        if !seen.insert(region_id.clone()) {
            return Err(bad(format!("duplicate region_id {region_id:?}")));
        }
        let polygons = match f.geometry {
            Some(RawGeometry::Polygon(rings)) => vec![polygon(index, &rings)?],
            Some(RawGeometry::MultiPolygon(polys)) => polys
                .iter()
                .map(|rings| polygon(index, rings))
                .collect::<Result<Vec<_>, _>>()?,
            _ => return Err(bad("expected Polygon or MultiPolygon geometry".into())),
        };
        if polygons.is_empty() {
            return Err(bad("empty MultiPolygon".into()));
        }
        out.push(Region {
            region_id,
            polygons,
        });
    }
    Ok(out)
}

fn coords(points: &[LatLon]) -> Value {
    Value::Array(points.iter().map(|p| json!([p.lon, p.lat])).collect())
}

pub fn streets_to_geojson(segments: &[StreetSegment]) -> Value {
    let features: Vec<Value> = segments
        .iter()
        .map(|s| {
            json!({
                "type": "Feature",
                "properties": {"segment_id": s.segment_id, "street_type": s.street_type.as_str()},
                "geometry": {"type": "LineString", "coordinates": coords(&s.polyline)},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn regions_to_geojson(regions: &[Region]) -> Value {
    let poly = |p: &Polygon| Value::Array(p.rings().map(|r| coords(r)).collect());
    let features: Vec<Value> = regions
        .iter()
        .map(|r| {
            let geometry = match r.polygons.as_slice() {
                [one] => json!({"type": "Polygon", "coordinates": poly(one)}),
                many => json!({
                    "type": "MultiPolygon",
                    "coordinates": Value::Array(many.iter().map(poly).collect()),
                }),
            };
            json!({
                "type": "Feature",
                "properties": {"region_id": r.region_id},
                "geometry": geometry,
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn haversine(a: LatLon, b: LatLon) -> f64 {
        let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
        let dlat = la2 - la1;
        let dlon = (b.lon - a.lon).to_radians();
        let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().asin()
    }

    fn seg(id: &str, pts: &[(f64, f64)]) -> StreetSegment {
        StreetSegment {
            segment_id: id.to_string(),
            polyline: pts.iter().map(|&(lat, lon)| LatLon::new(lat, lon)).collect(),
            street_type: StreetScene::CityStreet,
        }
    }

    fn square(id: &str, lat0: f64, lon0: f64, size: f64) -> Region {
        let ring = vec![
            LatLon::new(lat0, lon0),
            LatLon::new(lat0, lon0 + size),
            LatLon::new(lat0 + size, lon0 + size),
            LatLon::new(lat0 + size, lon0),
            LatLon::new(lat0, lon0),
        ];
        Region {
            region_id: id.to_string(),
            polygons: vec![Polygon {
                exterior: ring,
                holes: vec![],
            }],
        }
    }

    #[test]
    fn projection_examples() {
        let o = LatLon::new(40.0, -74.0);
        assert_eq!(local_project(o, o).unwrap(), (0.0, 0.0));

        let north = LatLon::new(40.0009, -74.0);
        let (x, y) = local_project(o, north).unwrap();
        assert_eq!(x, 0.0);
        assert!((y - 100.075).abs() < 0.01, "{y}");
        assert!((y - haversine(o, north)).abs() / y < 1e-3);

        let east = LatLon::new(40.0, -73.9988);
        let (x, y) = local_project(o, east).unwrap();
        assert_eq!(y, 0.0);
        assert!((x - 102.2).abs() < 0.1, "{x}");
        assert!((x - haversine(o, east)).abs() / x < 1e-3);

        assert!(matches!(
            local_project(o, LatLon::new(41.5, -74.0)),
            Err(GeoError::OutOfWindow { .. })
        ));
    }

    #[test]
    fn unproject_inverts_projection() {
        let o = LatLon::new(40.7, -73.9);
        for p in [LatLon::new(40.71, -73.95), LatLon::new(40.2, -73.1), LatLon::new(41.6, -74.8)] {
            let (x, y) = local_project(o, p).unwrap();
            let back = local_unproject(o, x, y);
            assert!((back.lat - p.lat).abs() < 1e-9);
            assert!((back.lon - p.lon).abs() < 1e-9);
        }
    }

    #[test]
    fn segment_distance_examples() {
        let s = seg("a", &[(40.0, -74.001), (40.0, -73.999)]);
        assert_eq!(point_segment_distance(LatLon::new(40.0, -74.001), &s), 0.0);

        // 50 m due north of the edge midpoint.
        let mid = LatLon::new(40.0, -74.0);
        let p = local_unproject(mid, 0.0, 50.0);
        let d = point_segment_distance(p, &s);
        assert!((d - 50.0).abs() < 0.1, "{d}");

        // Beyond the east endpoint the projection parameter clamps.
        let beyond = LatLon::new(40.0, -73.998);
        let d = point_segment_distance(beyond, &s);
        let (ex, ey) = project_unchecked(beyond, LatLon::new(40.0, -73.999));
        assert!((d - ex.hypot(ey)).abs() < 1e-9);
    }

    #[test]
    fn match_point_examples() {
        let origin = LatLon::new(40.0, -74.0);
        let west = local_unproject(origin, -200.0, 0.0);
        let east = local_unproject(origin, 200.0, 0.0);
        let a = seg("A", &[(west.lat, west.lon), (east.lat, east.lon)]);
        let b_w = local_unproject(origin, -200.0, 30.0);
        let b_e = local_unproject(origin, 200.0, 30.0);
        let b = seg("B", &[(b_w.lat, b_w.lon), (b_e.lat, b_e.lon)]);
        let segs = [a.clone(), b.clone()];

        let on_a = match_point(origin, &segs, 30.0).unwrap();
        assert_eq!(on_a.segment_id, "A");
        assert!(on_a.distance_m < 1e-6);

        let p = local_unproject(origin, 0.0, 10.0);
        let m = match_point(p, &segs, 30.0).unwrap();
        assert_eq!(m.segment_id, "A");
        assert!((m.distance_m - 10.0).abs() < 0.01);

        let far = local_unproject(origin, 0.0, -50.0);
        assert_eq!(match_point(far, &segs, 30.0), None);

        // Equidistant: the smaller id wins regardless of candidate order.
        let mid = local_unproject(origin, 0.0, 15.0);
        let rev = [b, a];
        assert_eq!(match_point(mid, &rev, 30.0).unwrap().segment_id, "A");
    }

    #[test]
    fn point_in_region_examples() {
        let r = square("r", 40.0, -74.0, 0.01);
        assert!(point_in_region(&LatLon::new(40.005, -73.995), &r));
        assert!(point_in_region(&LatLon::new(40.0, -73.995), &r));
        assert!(point_in_region(&LatLon::new(40.0, -74.0), &r));
        assert!(!point_in_region(&LatLon::new(40.02, -73.995), &r));

        let mut holed = r.clone();
        holed.polygons[0].holes.push(square("h", 40.004, -73.996, 0.002).polygons[0].exterior.clone());
        assert!(!point_in_region(&LatLon::new(40.005, -73.995), &holed));
        assert!(point_in_region(&LatLon::new(40.001, -73.999), &holed));
        // Hole boundary is region boundary.
        assert!(point_in_region(&LatLon::new(40.004, -73.995), &holed));
    }

    #[test]
    fn trip_cut_across_two_regions() {
        use crate::doc::test_util::trip_with;
        use crate::types::ActionId;
        let regions = vec![square("10002", 40.001, -74.0, 0.001), square("10001", 40.0, -74.0, 0.001)];
        let mut trip = trip_with("t", &[([1.0; 4], ActionId::GoStraight); 20]);
        for (i, f) in trip.frames.iter_mut().enumerate() {
            // 10 frames per region, strictly inside each square.
            let lat = if i < 10 { 40.0002 + 0.00005 * i as f64 } else { 40.0012 + 0.00005 * (i - 10) as f64 };
            f.location = LatLon::new(lat, -73.9995);
        }
        let slices = assign_regions("t", &trip.frames, &regions);
        assert_eq!(slices.len(), 2);
        assert_eq!((slices[0].region_id.as_deref(), slices[0].start, slices[0].end), (Some("10001"), 0, 10));
        assert_eq!((slices[1].region_id.as_deref(), slices[1].start, slices[1].end), (Some("10002"), 10, 20));

        let one = assign_regions("t", &trip.frames[..5], &regions);
        assert_eq!(one.len(), 1);

        let outside = assign_regions("t", &trip.frames, &[square("x", 10.0, 10.0, 1.0)]);
        assert_eq!(outside, vec![TripSlice { trip_id: "t".into(), region_id: None, start: 0, end: 20 }]);
    }

    #[test]
    fn overlapping_regions_resolve_to_smallest_id() {
        let regions = vec![square("b", 40.0, -74.0, 0.01), square("a", 40.0, -74.0, 0.01)];
        let sorted = sorted_regions(&regions);
        let r = locate_region(&LatLon::new(40.005, -73.995), &sorted).unwrap();
        assert_eq!(r.region_id, "a");
    }

    #[test]
    fn geojson_round_trip() {
        let streets = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"segment_id":"s1","street_type":"highway"},
             "geometry":{"type":"LineString","coordinates":[[-74.0,40.0],[-73.99,40.0,12.0]]}},
            {"type":"Feature","properties":{"segment_id":7,"street_type":"motorway"},
             "geometry":{"type":"LineString","coordinates":[[-74.0,40.0],[-74.0,40.01]]}}]}"#;
        let segs = parse_streets(streets).unwrap();
        assert_eq!(segs[0].street_type, StreetScene::Highway);
        assert_eq!(segs[1].segment_id, "7");
        assert_eq!(segs[1].street_type, StreetScene::Undefined);
        let again = parse_streets(&streets_to_geojson(&segs).to_string()).unwrap();
        assert_eq!(again, segs);

        let regions = vec![square("10001", 40.0, -74.0, 0.01), {
            let mut multi = square("10002", 41.0, -74.0, 0.01);
            multi.polygons.push(square("", 41.1, -74.0, 0.01).polygons.remove(0));
            multi
        }];
        let text = regions_to_geojson(&regions).to_string();
        assert_eq!(parse_regions(&text).unwrap(), regions);
    }

    #[test]
    fn geojson_errors() {
        assert!(parse_streets("{").is_err());
        let dup = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"segment_id":"s"},"geometry":{"type":"LineString","coordinates":[[0,0],[1,1]]}},
            {"type":"Feature","properties":{"segment_id":"s"},"geometry":{"type":"LineString","coordinates":[[0,0],[1,1]]}}]}"#;
        assert!(matches!(parse_streets(dup), Err(GeoError::BadFeature { index: 1, .. })));
        let open = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"region_id":"r"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1]]]}}]}"#;
        assert!(parse_regions(open).is_err());
    }
}
