use serde_json::{json, Value};

use super::{Kind, MetadataStore};
use crate::model::Timestamp;

fn footprint() -> Value {
    json!({"system": "WGB", "boundary": [[0, 0], [0, 78], [73, 78], [73, 0]]})
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Value {
    json!({"system": "WGB", "boundary": [[x0, y0], [x0, y1], [x1, y1], [x1, y0]]})
}

fn room(id: &str, parent: &str, name: &str, floor: i32, bounds: Value) -> Value {
    let pts = bounds["boundary"].as_array().unwrap();
    let x = (pts[0][0].as_f64().unwrap() + pts[2][0].as_f64().unwrap()) / 2.0;
    let y = (pts[0][1].as_f64().unwrap() + pts[2][1].as_f64().unwrap()) / 2.0;
    json!({
        "crate_id": id,
        "crate_type": "room",
        "parent_crate_id": parent,
        "long-name": name,
        "description": "",
        "acp_boundary": bounds,
        "acp_location": {"system": "WGB", "x": x, "y": y, "f": floor, "zf": 0},
    })
}

fn co2_sensor(id: &str, parent: &str) -> Value {
    json!({
        "acp_id": id,
        "type": "co2",
        "owner": "ijl20",
        "source": "mqtt_ttn",
        "features": ["co2", "humidity", "light", "motion", "temperature", "vdd"],
        "acp_location": {
            "system": "GPS",
            "acp_alt": 10,
            "acp_lat": -27.116667,
            "acp_lng": -109.366667,
            "parent_crate_id": parent
        }
    })
}

/// A small building used by the demos and the acceptance suite: one
/// building with three floors, four rooms, sensors in three of them, a
/// handful of people and the three standard access rules.
pub fn demo_site() -> MetadataStore {
    let mut s = MetadataStore::new();
    let t0 = Timestamp::parse("1589400000").unwrap();
    let mut put = |kind: Kind, id: &str, body: Value, at: &Timestamp| {
        s.upsert(kind, id, body, at.clone()).expect("fixture record is valid");
    };

    put(
        Kind::Crate,
        "WGB",
        json!({
            "crate_type": "building",
            "long-name": "William Gates Building",
            "description": "Computer Laboratory",
            "acp_boundary": footprint(),
            "acp_location": {"system": "GPS", "acp_lat": -27.116667, "acp_lng": -109.366667, "acp_alt": 0.0},
        }),
        &t0,
    );
    for (id, name, f) in [("GF", "Ground Floor", 0), ("FF", "First Floor", 1), ("SF", "Second Floor", 2)] {
        put(
            Kind::Crate,
            id,
            json!({
                "crate_type": "floor",
                "parent_crate_id": "WGB",
                "long-name": name,
                "description": "",
                "acp_boundary": footprint(),
                "acp_location": {"system": "WGB", "x": 36.5, "y": 39, "f": f, "zf": 0},
            }),
            &t0,
        );
    }
    put(Kind::Crate, "LT1", room("LT1", "GF", "Lecture Theatre 1", 0, rect(5.0, 5.0, 30.0, 25.0)), &t0);
    put(Kind::Crate, "FN05", room("FN05", "FF", "Office FN05", 1, rect(10.0, 60.0, 22.0, 70.0)), &t0);
    put(Kind::Crate, "SE13", room("SE13", "SF", "Office SE13", 2, rect(55.0, 10.0, 70.0, 20.0)), &t0);
    let mut fe11 = room("FE11", "FF", "Computer Science Department", 1, rect(54.97, 0.0, 73.045, 6.106));
    fe11["description"] = json!("Crate Description");
    fe11["acp_location"] = json!({"system": "WGB", "x": 22.06, "y": 34.67, "f": 1, "zf": 0});
    put(Kind::Crate, "FE11", fe11, &Timestamp::parse("1589469825.165538").unwrap());

    let t1 = Timestamp::parse("1589469900").unwrap();
    put(Kind::Sensor, "elsys-co2-041ba9", co2_sensor("elsys-co2-041ba9", "FE11"), &Timestamp::parse("1589469979.861816").unwrap());
    put(Kind::Sensor, "elsys-co2-0a1b2c", co2_sensor("elsys-co2-0a1b2c", "LT1"), &t1);
    put(Kind::Sensor, "elsys-co2-05f5e1", co2_sensor("elsys-co2-05f5e1", "FN05"), &t1);

    put(Kind::Org, "uoc", json!({"name": "University"}), &t0);
    put(Kind::Org, "cst", json!({"name": "Department of Computer Science", "parent_org_id": "uoc"}), &t0);
    put(Kind::Org, "estates", json!({"name": "Estates Division", "parent_org_id": "uoc"}), &t0);

    put(Kind::Person, "ab123", json!({"name": "FN05 occupant", "affiliations": ["cst"], "occupies": ["FN05"]}), &t1);
    put(Kind::Person, "cd456", json!({"name": "FE11 occupant", "affiliations": ["cst"], "occupies": ["FE11"]}), &t1);
    put(
        Kind::Person,
        "ef789",
        json!({"name": "Building manager", "affiliations": ["estates"], "occupies": [], "roles": ["building_manager"]}),
        &t1,
    );
    put(Kind::Person, "gh012", json!({"name": "Visitor", "affiliations": [], "occupies": []}), &t1);

    put(
        Kind::Permission,
        "perm-wgb-managers",
        json!({"subject": {"role": "building_manager", "org": "estates"}, "verb": "sensor_data_read", "object": "WGB"}),
        &t1,
    );
    put(
        Kind::Permission,
        "perm-lt1-members",
        json!({"subject": {"role": "department_member", "org": "cst"}, "verb": "sensor_data_read", "object": "LT1"}),
        &t1,
    );
    s
}
