//! Shared domain types: timestamps, locations, boundaries and the envelope.

mod envelope;
mod geometry;
mod location;
mod timestamp;

pub use envelope::{number_value, Envelope, EnvelopeBuilder, EnvelopeError, Feature, UnknownFeature, RESERVED_KEYS};
pub use geometry::{point_in_boundary, Boundary, GeometryError, PlanarPoint};
pub use location::{
    metres_per_degree_lat, transform_location, CoordinateTransform, Location, LocationError, Position,
    SystemTag, TransformRegistry, GPS_SYSTEM, HIERARCHY_SYSTEM,
};
pub use timestamp::{Clock, SystemClock, Timestamp, TimestampError, VirtualClock, MAX_FRACTION_DIGITS};
