use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::svg::floor_crates;
use super::ApiError;
use crate::metadata::MetadataStore;
use crate::model::{Boundary, Envelope, Feature, Position, Timestamp};

pub const IDW_POWER: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub x: f64,
    pub y: f64,
    pub crate_id: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapGrid {
    pub floor: i32,
    pub feature: Feature,
    pub cell_size: f64,
    pub as_of: Option<Timestamp>,
    pub cells: Vec<HeatmapCell>,
}

/// Inverse-distance weighting; a cell on top of a source takes that
/// source's value (the mean if several coincide).
pub fn idw(x: f64, y: f64, sources: &[([f64; 2], f64)], power: f64) -> Option<f64> {
    match sources {
        [] => return None,
        [(_, v)] => return Some(*v),
        _ => {}
    }
    let exact: Vec<f64> =
        sources.iter().filter(|(p, _)| (p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12).map(|(_, v)| *v).collect();
    if !exact.is_empty() {
        return Some(exact.iter().sum::<f64>() / exact.len() as f64);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, v) in sources {
        let d2 = (p[0] - x).powi(2) + (p[1] - y).powi(2);
        let w = 1.0 / d2.powf(power / 2.0);
        num += w * v;
        den += w;
    }
    Some(num / den)
}

#[derive(Debug, Clone)]
struct RoomGrid {
    centres: Vec<[f64; 2]>,
    values: Vec<Option<f64>>,
    /// sensor id -> (position, latest value, its timestamp)
    sources: BTreeMap<String, ([f64; 2], Option<(f64, Timestamp)>)>,
}

impl RoomGrid {
    fn recompute(&mut self) -> usize {
        let src: Vec<([f64; 2], f64)> =
            self.sources.values().filter_map(|(p, v)| v.as_ref().map(|(v, _)| (*p, *v))).collect();
        for (c, out) in self.centres.iter().zip(self.values.iter_mut()) {
            *out = idw(c[0], c[1], &src, IDW_POWER);
        }
        self.centres.len()
    }
}

/// Cell centres of a regular grid that fall inside `b`.
pub fn room_cells(b: &Boundary, cell_size: f64) -> Vec<[f64; 2]> {
    let (lo, hi) = b.bbox();
    let nx = ((hi[0] - lo[0]) / cell_size).ceil().max(0.0) as usize;
    let ny = ((hi[1] - lo[1]) / cell_size).ceil().max(0.0) as usize;
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (lo[0] + (i as f64 + 0.5) * cell_size, lo[1] + (j as f64 + 0.5) * cell_size);
            if b.contains_xy(x, y) {
                out.push([x, y]);
            }
        }
    }
    out
}

/// Room-bounded heatmap of one feature on one floor. Each room is
/// interpolated only from sensors inside it, so values never cross walls.
#[derive(Debug, Clone)]
pub struct Heatmap {
    floor: i32,
    feature: Feature,
    cell_size: f64,
    rooms: BTreeMap<String, RoomGrid>,
    sensor_room: HashMap<String, String>,
    as_of: Option<Timestamp>,
    touched: u64,
}

impl Heatmap {
    pub fn new(store: &MetadataStore, floor: i32, feature: Feature, cell_size: f64) -> Result<Self, ApiError> {
        if !(cell_size > 0.0) {
            return Err(ApiError::BadRequest(format!("cell size must be positive, got {cell_size}")));
        }
        let mut rooms = BTreeMap::new();
        let mut sensor_room = HashMap::new();
        for c in floor_crates(store, floor)? {
            let b = c.acp_boundary.clone().expect("bounded");
            let mut sources = BTreeMap::new();
            for s in store.sensors_in_crate(&c.crate_id, true)? {
                let pos = match s.acp_location.as_ref().map(|l| &l.position) {
                    Some(Position::Building { building, x, y, .. }) if building == b.system() => [*x, *y],
                    _ => b.centroid(),
                };
                sensor_room.insert(s.acp_id.clone(), c.crate_id.clone());
                sources.insert(s.acp_id, (pos, None));
            }
            let centres = room_cells(&b, cell_size);
            let values = vec![None; centres.len()];
            rooms.insert(c.crate_id.clone(), RoomGrid { centres, values, sources });
        }
        Ok(Self { floor, feature, cell_size, rooms, sensor_room, as_of: None, touched: 0 })
    }

    /// Built from scratch over a set of envelopes; the reference for
    /// incremental updates.
    pub fn full<'a>(
        store: &MetadataStore,
        floor: i32,
        feature: Feature,
        cell_size: f64,
        envelopes: impl IntoIterator<Item = &'a Envelope>,
    ) -> Result<Self, ApiError> {
        let mut h = Self::new(store, floor, feature, cell_size)?;
        for e in envelopes {
            h.record(e);
        }
        for r in h.rooms.values_mut() {
            r.recompute();
        }
        Ok(h)
    }

    /// Stores the value without recomputing; returns the affected room.
    fn record(&mut self, env: &Envelope) -> Option<String> {
        let v = env.cooked(self.feature)?;
        let room_id = self.sensor_room.get(env.acp_id())?.clone();
        let room = self.rooms.get_mut(&room_id)?;
        let slot = &mut room.sources.get_mut(env.acp_id())?.1;
        if slot.as_ref().is_some_and(|(_, t)| t > env.acp_ts()) {
            return None;
        }
        *slot = Some((v, env.acp_ts().clone()));
        if self.as_of.as_ref().is_none_or(|t| t < env.acp_ts()) {
            self.as_of = Some(env.acp_ts().clone());
        }
        Some(room_id)
    }

    /// Applies one envelope, recomputing only the cells of its sensor's
    /// room. Returns how many cells were recomputed.
    pub fn apply(&mut self, env: &Envelope) -> usize {
        let Some(room) = self.record(env) else { return 0 };
        let n = self.rooms.get_mut(&room).map_or(0, RoomGrid::recompute);
        self.touched += n as u64;
        n
    }

    /// Total cells recomputed by [`apply`](Self::apply) so far.
    pub fn touched_cells(&self) -> u64 {
        self.touched
    }

    pub fn room_of(&self, sensor: &str) -> Option<&str> {
        self.sensor_room.get(sensor).map(String::as_str)
    }

    pub fn room_cell_count(&self, room: &str) -> usize {
        self.rooms.get(room).map_or(0, |r| r.centres.len())
    }

    pub fn grid(&self) -> HeatmapGrid {
        let cells = self
            .rooms
            .iter()
            .flat_map(|(id, r)| {
                r.centres.iter().zip(&r.values).map(move |(c, v)| HeatmapCell {
                    x: c[0],
                    y: c[1],
                    crate_id: id.clone(),
                    value: *v,
                })
            })
            .collect();
        HeatmapGrid { floor: self.floor, feature: self.feature, cell_size: self.cell_size, as_of: self.as_of.clone(), cells }
    }
}
