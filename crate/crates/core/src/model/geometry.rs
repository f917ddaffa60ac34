use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the on-edge test, in the boundary's own units.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("boundary needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("point in system {point:?} but boundary in {boundary:?}")]
    SystemMismatch { point: String, boundary: String },
    #[error("malformed boundary: {0}")]
    Malformed(String),
}

/// A 2D point tagged with its coordinate system name.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPoint {
    pub system: String,
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub fn new(system: &str, x: f64, y: f64) -> Self {
        Self { system: system.to_string(), x, y }
    }
}

/// Implicitly closed polygon. Self-intersection is allowed and kept as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoundaryRepr", into = "BoundaryRepr")]
pub struct Boundary {
    system: String,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct BoundaryRepr {
    system: String,
    boundary: Vec<[f64; 2]>,
}

impl TryFrom<BoundaryRepr> for Boundary {
    type Error = GeometryError;

    fn try_from(r: BoundaryRepr) -> Result<Self, Self::Error> {
        Boundary::new(&r.system, r.boundary)
    }
}

impl From<Boundary> for BoundaryRepr {
    fn from(b: Boundary) -> Self {
        BoundaryRepr { system: b.system, boundary: b.points }
    }
}

impl Boundary {
    pub fn new(system: &str, points: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if points.len() < 3 {
            return Err(GeometryError::TooFewVertices(points.len()));
        }
        Ok(Self { system: system.to_string(), points })
    }

    /// Parses the `"[[0,0],[0,78],...]"` string form some records carry.
    pub fn from_array_text(system: &str, text: &str) -> Result<Self, GeometryError> {
        let points: Vec<[f64; 2]> =
            serde_json::from_str(text).map_err(|e| GeometryError::Malformed(e.to_string()))?;
        Self::new(system, points)
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Vertex mean; good enough as an anchor for sensors without coordinates.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        [sx / n, sy / n]
    }

    fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Even-odd containment with points on an edge counted as inside.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        if self.edges().any(|(a, b)| on_segment(a, b, x, y)) {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > y) != (b[1] > y) {
                let cross_x = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if x < cross_x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn on_segment(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> bool {
    let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if cross.abs() > EDGE_EPS * len.max(1.0) {
        return false;
    }
    x >= a[0].min(b[0]) - EDGE_EPS
        && x <= a[0].max(b[0]) + EDGE_EPS
        && y >= a[1].min(b[1]) - EDGE_EPS
        && y <= a[1].max(b[1]) + EDGE_EPS
}

pub fn point_in_boundary(p: &PlanarPoint, b: &Boundary) -> Result<bool, GeometryError> {
    if p.system != b.system {
        return Err(GeometryError::SystemMismatch {
            point: p.system.clone(),
            boundary: b.system.clone(),
        });
    }
    Ok(b.contains_xy(p.x, p.y))
}
