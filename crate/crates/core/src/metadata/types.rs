use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::model::{Boundary, Location};

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Crate,
    Sensor,
    Person,
    Org,
    Permission,
}

impl Kind {
    pub const ALL: [Kind; 5] = [Kind::Crate, Kind::Sensor, Kind::Person, Kind::Org, Kind::Permission];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Crate => "crate",
            Kind::Sensor => "sensor",
            Kind::Person => "person",
            Kind::Org => "org",
            Kind::Permission => "permission",
        }
    }

    /// Body key that must carry the object id.
    pub fn id_key(self) -> &'static str {
        match self {
            Kind::Crate => "crate_id",
            Kind::Sensor => "acp_id",
            Kind::Person => "person_id",
            Kind::Org => "org_id",
            Kind::Permission => "permission_id",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StoreError::InvalidBody(format!("unknown kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CrateType {
    Building,
    Floor,
    Room,
    Other(String),
}

impl CrateType {
    pub fn name(&self) -> &str {
        match self {
            CrateType::Building => "building",
            CrateType::Floor => "floor",
            CrateType::Room => "room",
            CrateType::Other(s) => s,
        }
    }

    pub fn from_name(s: &str) -> Self {
        match s {
            "building" => CrateType::Building,
            "floor" => CrateType::Floor,
            "room" => CrateType::Room,
            other => CrateType::Other(other.to_string()),
        }
    }
}

impl Serialize for CrateType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CrateType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(CrateType::from_name(&String::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crate {
    pub crate_id: String,
    pub crate_type: CrateType,
    pub parent_crate_id: Option<String>,
    pub acp_boundary: Option<Boundary>,
    pub acp_location: Option<Location>,
    pub long_name: String,
    pub description: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BoundaryField {
    Object(Boundary),
    Text(String),
}

#[derive(Serialize, Deserialize)]
struct CrateRepr {
    crate_id: String,
    crate_type: CrateType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_crate_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acp_boundary: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acp_location: Option<Location>,
    #[serde(rename = "long-name", default)]
    long_name: String,
    #[serde(default)]
    description: String,
}

fn invalid(kind: Kind, e: impl fmt::Display) -> StoreError {
    StoreError::InvalidBody(format!("{kind}: {e}"))
}

impl Crate {
    pub fn new(crate_id: &str, crate_type: CrateType, parent: Option<&str>) -> Self {
        Self {
            crate_id: crate_id.to_string(),
            crate_type,
            parent_crate_id: parent.map(str::to_string),
            acp_boundary: None,
            acp_location: None,
            long_name: String::new(),
            description: String::new(),
        }
    }

    /// Accepts the boundary either as `{system, boundary}` or as the bare
    /// array-in-a-string form, which borrows its system from `acp_location`.
    pub fn from_body(body: &Map<String, Value>) -> Result<Self, StoreError> {
        let r: CrateRepr =
            serde_json::from_value(Value::Object(body.clone())).map_err(|e| invalid(Kind::Crate, e))?;
        let acp_boundary = match r.acp_boundary {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                match serde_json::from_value::<BoundaryField>(v).map_err(|e| invalid(Kind::Crate, e))? {
                    BoundaryField::Object(b) => b,
                    BoundaryField::Text(t) => {
                        let system = r
                            .acp_location
                            .as_ref()
                            .map(|l| l.system().name().to_string())
                            .unwrap_or_else(|| r.crate_id.clone());
                        Boundary::from_array_text(&system, &t).map_err(|e| invalid(Kind::Crate, e))?
                    }
                },
            ),
        };
        Ok(Self {
            crate_id: r.crate_id,
            crate_type: r.crate_type,
            parent_crate_id: r.parent_crate_id,
            acp_boundary,
            acp_location: r.acp_location,
            long_name: r.long_name,
            description: r.description,
        })
    }

    pub fn to_body(&self) -> Map<String, Value> {
        let r = CrateRepr {
            crate_id: self.crate_id.clone(),
            crate_type: self.crate_type.clone(),
            parent_crate_id: self.parent_crate_id.clone(),
            acp_boundary: self.acp_boundary.as_ref().map(|b| serde_json::to_value(b).unwrap()),
            acp_location: self.acp_location.clone(),
            long_name: self.long_name.clone(),
            description: self.description.clone(),
        };
        as_map(serde_json::to_value(r).unwrap())
    }

    /// Floor number for crates placed in in-building coordinates.
    pub fn floor(&self) -> Option<i32> {
        match self.acp_location.as_ref()?.position {
            crate::model::Position::Building { floor, .. } => Some(floor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub acp_id: String,
    #[serde(rename = "type", default)]
    pub acp_type: String,
    #[serde(default)]
    pub owner: String,
    #[serde(default)]
    pub source: String,
    /// Feature names this sensor reports; a comma-separated string is accepted on input.
    #[serde(default, deserialize_with = "list_or_csv")]
    pub features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acp_location: Option<Location>,
}

fn list_or_csv<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        List(Vec<String>),
        Text(String),
    }
    Ok(match Either::deserialize(d)? {
        Either::List(v) => v,
        Either::Text(s) => {
            s.split(',').map(str::trim).filter(|f| !f.is_empty()).map(str::to_string).collect()
        }
    })
}

impl SensorMeta {
    pub fn from_body(body: &Map<String, Value>) -> Result<Self, StoreError> {
        serde_json::from_value(Value::Object(body.clone())).map_err(|e| invalid(Kind::Sensor, e))
    }

    pub fn to_body(&self) -> Map<String, Value> {
        as_map(serde_json::to_value(self).unwrap())
    }

    pub fn parent_crate_id(&self) -> Option<&str> {
        self.acp_location.as_ref()?.parent_crate_id.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub person_id: String,
    #[serde(default)]
    pub name: String,
    /// Organisation ids; a person can belong to several.
    #[serde(default)]
    pub affiliations: Vec<String>,
    #[serde(default)]
    pub occupies: Vec<String>,
    /// Named roles beyond plain membership, e.g. `building_manager`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roles: Vec<String>,
}

impl Person {
    pub fn from_body(body: &Map<String, Value>) -> Result<Self, StoreError> {
        serde_json::from_value(Value::Object(body.clone())).map_err(|e| invalid(Kind::Person, e))
    }

    pub fn to_body(&self) -> Map<String, Value> {
        as_map(serde_json::to_value(self).unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Org {
    pub org_id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_org_id: Option<String>,
}

impl Org {
    pub fn from_body(body: &Map<String, Value>) -> Result<Self, StoreError> {
        serde_json::from_value(Value::Object(body.clone())).map_err(|e| invalid(Kind::Org, e))
    }

    pub fn to_body(&self) -> Map<String, Value> {
        as_map(serde_json::to_value(self).unwrap())
    }
}

pub const ROLE_DEPARTMENT_MEMBER: &str = "department_member";
pub const ROLE_BUILDING_MANAGER: &str = "building_manager";
pub const VERB_SENSOR_DATA_READ: &str = "sensor_data_read";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subject {
    Person { person: String },
    /// Holders of `role` affiliated with `org` or any of its sub-organisations.
    Role {
        role: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        org: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Permission {
    pub permission_id: String,
    pub subject: Subject,
    pub verb: String,
    /// A crate id or a sensor acp_id.
    pub object: String,
}

impl Permission {
    pub fn from_body(body: &Map<String, Value>) -> Result<Self, StoreError> {
        serde_json::from_value(Value::Object(body.clone())).map_err(|e| invalid(Kind::Permission, e))
    }

    pub fn to_body(&self) -> Map<String, Value> {
        as_map(serde_json::to_value(self).unwrap())
    }
}

fn as_map(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("struct serialises to an object"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn crate_accepts_string_boundary() {
        let body = json!({
            "crate_id": "FE11",
            "crate_type": "room",
            "long-name": "Computer Science Department",
            "description": "Crate Description",
            "acp_boundary": "[[0,0] , [0,78], [73,78], [73,0]]",
            "parent_crate_id": "FF",
            "acp_location": {"f": 1, "x": 22.06, "y": 34.67, "z": 0, "system": "WGB"}
        });
        let c = Crate::from_body(body.as_object().unwrap()).unwrap();
        let b = c.acp_boundary.as_ref().unwrap();
        assert_eq!(b.system(), "WGB");
        assert_eq!(b.points().len(), 4);
        assert_eq!(c.floor(), Some(1));
        assert_eq!(c.to_body()["acp_boundary"], json!({"system":"WGB","boundary":[[0.0,0.0],[0.0,78.0],[73.0,78.0],[73.0,0.0]]}));
    }

    #[test]
    fn sensor_features_from_csv_and_type_key() {
        let body = json!({
            "acp_id": "elsys-co2-041ba9",
            "type": "co2",
            "owner": "ijl20",
            "source": "mqtt_ttn",
            "features": "co2, humidity,\n  light, motion,\n  temperature, vdd",
            "acp_location": {"system":"GPS","acp_alt":10,"acp_lat":-27.116667,"acp_lng":-109.366667,"parent_crate_id":"FE11"}
        });
        let s = SensorMeta::from_body(body.as_object().unwrap()).unwrap();
        assert_eq!(s.acp_type, "co2");
        assert_eq!(s.features, ["co2", "humidity", "light", "motion", "temperature", "vdd"]);
        assert_eq!(s.parent_crate_id(), Some("FE11"));
        assert!(s.to_body().contains_key("type"));
    }

    #[test]
    fn subject_forms() {
        let p: Subject = serde_json::from_value(json!({"person": "ab123"})).unwrap();
        assert_eq!(p, Subject::Person { person: "ab123".into() });
        let r: Subject = serde_json::from_value(json!({"role": "building_manager", "org": "estates"})).unwrap();
        assert!(matches!(r, Subject::Role { org: Some(_), .. }));
    }
}
