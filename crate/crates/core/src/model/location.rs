use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Mean earth radius in metres, used for the local tangent-plane approximation.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

pub const GPS_SYSTEM: &str = "GPS";
pub const HIERARCHY_SYSTEM: &str = "HIERARCHY";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocationError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeRange(f64),
    #[error("hierarchy location requires parent_crate_id")]
    MissingParent,
    #[error("location has no recognisable coordinates for system {0:?}")]
    Incomplete(String),
    #[error("unknown building {0:?}")]
    UnknownBuilding(String),
    #[error("no metric transform between {from} and {to}")]
    UnsupportedPair { from: SystemTag, to: SystemTag },
}

/// One of the three parallel reference systems.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemTag {
    Gps,
    Building(String),
    Hierarchy,
}

impl SystemTag {
    pub fn from_name(name: &str) -> Self {
        match name {
            GPS_SYSTEM => SystemTag::Gps,
            HIERARCHY_SYSTEM => SystemTag::Hierarchy,
            other => SystemTag::Building(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            SystemTag::Gps => GPS_SYSTEM,
            SystemTag::Hierarchy => HIERARCHY_SYSTEM,
            SystemTag::Building(b) => b,
        }
    }
}

impl fmt::Display for SystemTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Position {
    Gps { lat: f64, lng: f64, alt: f64 },
    /// Metres from the building origin, floor number and height above that floor.
    Building { building: String, x: f64, y: f64, floor: i32, zf: f64 },
    Hierarchy,
}

/// `acp_location`: a position in one reference system, optionally tied to
/// the crate that contains it.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub position: Position,
    pub parent_crate_id: Option<String>,
}

impl Location {
    pub fn gps(lat: f64, lng: f64, alt: f64) -> Result<Self, LocationError> {
        let loc = Self { position: Position::Gps { lat, lng, alt }, parent_crate_id: None };
        loc.validate()?;
        Ok(loc)
    }

    pub fn building(building: &str, x: f64, y: f64, floor: i32, zf: f64) -> Self {
        Self {
            position: Position::Building { building: building.to_string(), x, y, floor, zf },
            parent_crate_id: None,
        }
    }

    pub fn hierarchy(parent: &str) -> Self {
        Self { position: Position::Hierarchy, parent_crate_id: Some(parent.to_string()) }
    }

    pub fn with_parent(mut self, parent: &str) -> Self {
        self.parent_crate_id = Some(parent.to_string());
        self
    }

    pub fn system(&self) -> SystemTag {
        match &self.position {
            Position::Gps { .. } => SystemTag::Gps,
            Position::Building { building, .. } => SystemTag::Building(building.clone()),
            Position::Hierarchy => SystemTag::Hierarchy,
        }
    }

    pub fn validate(&self) -> Result<(), LocationError> {
        match &self.position {
            Position::Gps { lat, lng, .. } => {
                if !(-90.0..=90.0).contains(lat) {
                    return Err(LocationError::LatitudeRange(*lat));
                }
                if !(-180.0..=180.0).contains(lng) {
                    return Err(LocationError::LongitudeRange(*lng));
                }
            }
            Position::Hierarchy if self.parent_crate_id.is_none() => {
                return Err(LocationError::MissingParent)
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize, Default)]
struct LocationRepr {
    system: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    acp_lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acp_lng: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acp_alt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none", alias = "z")]
    zf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent_crate_id: Option<String>,
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut repr = LocationRepr {
            system: self.system().name().to_string(),
            parent_crate_id: self.parent_crate_id.clone(),
            ..Default::default()
        };
        match &self.position {
            Position::Gps { lat, lng, alt } => {
                repr.acp_lat = Some(*lat);
                repr.acp_lng = Some(*lng);
                repr.acp_alt = Some(*alt);
            }
            Position::Building { x, y, floor, zf, .. } => {
                repr.x = Some(*x);
                repr.y = Some(*y);
                repr.f = Some(*floor);
                repr.zf = Some(*zf);
            }
            Position::Hierarchy => {}
        }
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = LocationRepr::deserialize(deserializer)?;
        let position = match SystemTag::from_name(&r.system) {
            SystemTag::Gps => match (r.acp_lat, r.acp_lng) {
                (Some(lat), Some(lng)) => Position::Gps { lat, lng, alt: r.acp_alt.unwrap_or(0.0) },
                _ => {
                    return Err(serde::de::Error::custom(LocationError::Incomplete(r.system)));
                }
            },
            SystemTag::Hierarchy => Position::Hierarchy,
            SystemTag::Building(building) => match (r.x, r.y) {
                (Some(x), Some(y)) => Position::Building {
                    building,
                    x,
                    y,
                    floor: r.f.unwrap_or(0),
                    zf: r.zf.unwrap_or(0.0),
                },
                _ => return Err(serde::de::Error::custom(LocationError::Incomplete(building))),
            },
        };
        let loc = Location { position, parent_crate_id: r.parent_crate_id };
        loc.validate().map_err(serde::de::Error::custom)?;
        Ok(loc)
    }
}

/// Affine map from a building's local frame to WGS84.
///
/// Building `x` points east and `y` north after rotating by `rotation_deg`
/// (counter-clockwise) and scaling; the result is applied on a local tangent
/// plane at the anchor. Altitude is `anchor_alt + floor * floor_height + zf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateTransform {
    pub building: String,
    pub anchor_lat: f64,
    pub anchor_lng: f64,
    #[serde(default)]
    pub anchor_alt: f64,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    #[serde(default = "default_floor_height")]
    pub floor_height: f64,
}

fn unit_scale() -> f64 {
    1.0
}

fn default_floor_height() -> f64 {
    4.0
}

/// Metres per degree of latitude on the reference sphere.
pub fn metres_per_degree_lat() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

impl CoordinateTransform {
    pub fn translation(building: &str, lat: f64, lng: f64, alt: f64) -> Self {
        Self {
            building: building.to_string(),
            anchor_lat: lat,
            anchor_lng: lng,
            anchor_alt: alt,
            rotation_deg: 0.0,
            scale: 1.0,
            floor_height: default_floor_height(),
        }
    }

    fn metres_per_degree_lng(&self) -> f64 {
        metres_per_degree_lat() * self.anchor_lat.to_radians().cos()
    }

    pub fn to_gps(&self, x: f64, y: f64, floor: i32, zf: f64) -> (f64, f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let east = self.scale * (c * x - s * y);
        let north = self.scale * (s * x + c * y);
        let lat = self.anchor_lat + north / metres_per_degree_lat();
        let lng = self.anchor_lng + east / self.metres_per_degree_lng();
        let alt = self.anchor_alt + f64::from(floor) * self.floor_height + zf;
        (lat, lng, alt)
    }

    pub fn to_building(&self, lat: f64, lng: f64, alt: f64) -> (f64, f64, i32, f64) {
        let north = (lat - self.anchor_lat) * metres_per_degree_lat();
        let east = (lng - self.anchor_lng) * self.metres_per_degree_lng();
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let x = (c * east + s * north) / self.scale;
        let y = (-s * east + c * north) / self.scale;
        let rel = alt - self.anchor_alt;
        let floor = (rel / self.floor_height).floor();
        let zf = rel - floor * self.floor_height;
        (x, y, floor as i32, zf)
    }
}

/// Per-building transforms keyed by building name.
#[derive(Debug, Clone, Default)]
pub struct TransformRegistry {
    transforms: BTreeMap<String, CoordinateTransform>,
}

impl TransformRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: CoordinateTransform) {
        self.transforms.insert(t.building.clone(), t);
    }

    pub fn get(&self, building: &str) -> Option<&CoordinateTransform> {
        self.transforms.get(building)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CoordinateTransform> {
        self.transforms.values()
    }
}

impl FromIterator<CoordinateTransform> for TransformRegistry {
    fn from_iter<I: IntoIterator<Item = CoordinateTransform>>(iter: I) -> Self {
        let mut r = Self::new();
        for t in iter {
            r.insert(t);
        }
        r
    }
}

pub fn transform_location(
    loc: &Location,
    target: &SystemTag,
    registry: &TransformRegistry,
) -> Result<Location, LocationError> {
    let from = loc.system();
    if matches!(from, SystemTag::Hierarchy) || matches!(target, SystemTag::Hierarchy) {
        return Err(LocationError::UnsupportedPair { from, to: target.clone() });
    }
    if &from == target {
        return Ok(loc.clone());
    }
    let lookup = |b: &str| {
        registry.get(b).ok_or_else(|| LocationError::UnknownBuilding(b.to_string()))
    };
    let (lat, lng, alt) = match &loc.position {
        Position::Gps { lat, lng, alt } => (*lat, *lng, *alt),
        Position::Building { building, x, y, floor, zf } => {
            lookup(building)?.to_gps(*x, *y, *floor, *zf)
        }
        Position::Hierarchy => unreachable!(),
    };
    let position = match target {
        SystemTag::Gps => Position::Gps { lat, lng, alt },
        SystemTag::Building(b) => {
            let (x, y, floor, zf) = lookup(b)?.to_building(lat, lng, alt);
            Position::Building { building: b.clone(), x, y, floor, zf }
        }
        SystemTag::Hierarchy => unreachable!(),
    };
    Ok(Location { position, parent_crate_id: loc.parent_crate_id.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> TransformRegistry {
        let mut r = TransformRegistry::new();
        r.insert(CoordinateTransform::translation("WGB", 52.2108, 0.0916, 15.0));
        r.insert(CoordinateTransform {
            building: "LAB".into(),
            anchor_lat: -27.116667,
            anchor_lng: -109.366667,
            anchor_alt: 0.0,
            rotation_deg: 33.0,
            scale: 1.02,
            floor_height: 3.5,
        });
        r
    }

    #[test]
    fn origin_maps_to_anchor() {
        let r = registry();
        let loc = Location::building("WGB", 0.0, 0.0, 0, 0.0);
        let g = transform_location(&loc, &SystemTag::Gps, &r).unwrap();
        assert_eq!(g.position, Position::Gps { lat: 52.2108, lng: 0.0916, alt: 15.0 });
    }

    #[test]
    fn east_offset_matches_hand_computed_affine() {
        let r = registry();
        let loc = Location::building("WGB", 10.0, 0.0, 0, 0.0);
        let g = transform_location(&loc, &SystemTag::Gps, &r).unwrap();
        // independent: metres per degree on a sphere of mean radius
        let m_lat = 6_371_008.8 * std::f64::consts::PI / 180.0;
        let m_lng = m_lat * 52.2108f64.to_radians().cos();
        match g.position {
            Position::Gps { lat, lng, .. } => {
                assert!((lat - 52.2108).abs() < 1e-12);
                assert!((lng - (0.0916 + 10.0 / m_lng)).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn gps_round_trip_through_building() {
        let r = registry();
        let start = Location::gps(-27.1161, -109.3659, 12.25).unwrap().with_parent("FE11");
        let b = transform_location(&start, &SystemTag::Building("LAB".into()), &r).unwrap();
        let back = transform_location(&b, &SystemTag::Gps, &r).unwrap();
        assert_eq!(back.parent_crate_id.as_deref(), Some("FE11"));
        match (start.position, back.position) {
            (Position::Gps { lat: a, lng: b, alt: c }, Position::Gps { lat: x, lng: y, alt: z }) => {
                assert!((a - x).abs() < 1e-9 && (b - y).abs() < 1e-9);
                assert!((c - z).abs() < 1e-6);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn hierarchy_and_unknown_building_errors() {
        let r = registry();
        let h = Location::hierarchy("FE11");
        assert!(matches!(
            transform_location(&h, &SystemTag::Gps, &r),
            Err(LocationError::UnsupportedPair { .. })
        ));
        let b = Location::building("NOPE", 1.0, 1.0, 0, 0.0);
        assert!(matches!(
            transform_location(&b, &SystemTag::Gps, &r),
            Err(LocationError::UnknownBuilding(_))
        ));
    }

    #[test]
    fn json_shapes() {
        let l: Location = serde_json::from_str(
            r#"{"f":1,"x":22.06,"y":34.67,"z":0,"system":"WGB"}"#,
        )
        .unwrap();
        assert_eq!(l.position, Position::Building {
            building: "WGB".into(), x: 22.06, y: 34.67, floor: 1, zf: 0.0
        });
        let g: Location = serde_json::from_str(
            r#"{"system":"GPS","acp_alt":10,"acp_lat":-27.116667,"acp_lng":-109.366667,"parent_crate_id":"FE11"}"#,
        )
        .unwrap();
        assert_eq!(g.parent_crate_id.as_deref(), Some("FE11"));
        assert!(serde_json::from_str::<Location>(r#"{"system":"GPS","acp_lat":91,"acp_lng":0}"#).is_err());
        assert!(serde_json::from_str::<Location>(r#"{"system":"HIERARCHY"}"#).is_err());
        let v = serde_json::to_value(&g).unwrap();
        assert_eq!(v["system"], "GPS");
        assert_eq!(v["acp_lat"], -27.116667);
    }
}
