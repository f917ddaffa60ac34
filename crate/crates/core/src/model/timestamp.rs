use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Maximum number of sub-second digits (picosecond resolution).
pub const MAX_FRACTION_DIGITS: usize = 12;

const PICOS_PER_SEC: u128 = 1_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimestampError {
    #[error("malformed timestamp {0:?}")]
    MalformedTimestamp(String),
}

/// UNIX epoch timestamp kept as decimal digits end-to-end.
///
/// Equality, ordering and hashing use the numeric value, so `12.5` and
/// `12.500` compare equal while still printing back exactly as they were
/// parsed.
#[derive(Clone)]
pub struct Timestamp {
    seconds: u64,
    fraction: String,
}

impl Timestamp {
    pub fn parse(text: &str) -> Result<Self, TimestampError> {
        let bad = || TimestampError::MalformedTimestamp(text.to_string());
        let (secs, frac) = match text.split_once('.') {
            Some((s, f)) => (s, Some(f)),
            None => (text, None),
        };
        if secs.is_empty() || !secs.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        // leading zeros would not survive re-serialisation
        if secs.len() > 1 && secs.starts_with('0') {
            return Err(bad());
        }
        let seconds: u64 = secs.parse().map_err(|_| bad())?;
        let fraction = match frac {
            None => String::new(),
            Some(f) => {
                if f.is_empty()
                    || f.len() > MAX_FRACTION_DIGITS
                    || !f.bytes().all(|b| b.is_ascii_digit())
                {
                    return Err(bad());
                }
                f.to_string()
            }
        };
        Ok(Self { seconds, fraction })
    }

    pub fn from_secs(seconds: u64) -> Self {
        Self { seconds, fraction: String::new() }
    }

    /// Microsecond-resolution timestamp, six fraction digits like the
    /// platform's receipt stamps.
    pub fn from_micros(micros: u64) -> Self {
        Self {
            seconds: micros / 1_000_000,
            fraction: format!("{:06}", micros % 1_000_000),
        }
    }

    pub fn from_nanos(nanos: u128) -> Self {
        Self {
            seconds: (nanos / 1_000_000_000) as u64,
            fraction: format!("{:09}", nanos % 1_000_000_000),
        }
    }

    pub fn from_picos(picos: u128) -> Self {
        Self {
            seconds: (picos / PICOS_PER_SEC) as u64,
            fraction: format!("{:012}", picos % PICOS_PER_SEC),
        }
    }

    /// Wall-clock now at microsecond resolution.
    pub fn now() -> Self {
        let d = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Self::from_micros(d.as_micros() as u64)
    }

    pub fn seconds(&self) -> u64 {
        self.seconds
    }

    pub fn fraction(&self) -> &str {
        &self.fraction
    }

    /// Exact value in picoseconds since the epoch.
    pub fn as_picos(&self) -> u128 {
        let mut frac: u128 = 0;
        for (i, b) in self.fraction.bytes().enumerate() {
            frac += u128::from(b - b'0') * 10u128.pow((MAX_FRACTION_DIGITS - 1 - i) as u32);
        }
        u128::from(self.seconds) * PICOS_PER_SEC + frac
    }

    pub fn as_nanos(&self) -> u128 {
        self.as_picos() / 1000
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.seconds as f64 + (self.as_picos() % PICOS_PER_SEC) as f64 / PICOS_PER_SEC as f64
    }

    /// Signed difference `self - earlier` in milliseconds.
    pub fn millis_since(&self, earlier: &Timestamp) -> f64 {
        let a = self.as_picos() as i128;
        let b = earlier.as_picos() as i128;
        (a - b) as f64 / 1e9
    }

    /// Signed difference `self - earlier` in seconds.
    pub fn secs_since(&self, earlier: &Timestamp) -> f64 {
        self.millis_since(earlier) / 1000.0
    }

    pub fn plus_nanos(&self, nanos: u128) -> Self {
        Self::from_nanos(self.as_nanos() + nanos)
    }

    pub fn plus_secs(&self, secs: u64) -> Self {
        Self { seconds: self.seconds + secs, fraction: self.fraction.clone() }
    }

    pub fn plus_millis_f64(&self, millis: f64) -> Self {
        let nanos = (millis.max(0.0) * 1e6).round() as u128;
        self.plus_nanos(nanos)
    }

    pub fn minus_secs(&self, secs: u64) -> Self {
        Self {
            seconds: self.seconds.saturating_sub(secs),
            fraction: self.fraction.clone(),
        }
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.as_picos() == other.as_picos()
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.as_picos().cmp(&other.as_picos())
    }
}

impl Hash for Timestamp {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.as_picos().hash(state);
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.fraction.is_empty() {
            write!(f, "{}", self.seconds)
        } else {
            write!(f, "{}.{}", self.seconds, self.fraction)
        }
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({self})")
    }
}

impl FromStr for Timestamp {
    type Err = TimestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Timestamp::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Source of "now" for the platform; virtual in simulations.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// Manually advanced clock with nanosecond resolution.
#[derive(Debug, Default)]
pub struct VirtualClock {
    nanos: std::sync::Mutex<u128>,
}

impl VirtualClock {
    pub fn starting_at(ts: &Timestamp) -> Self {
        Self { nanos: std::sync::Mutex::new(ts.as_nanos()) }
    }

    pub fn set(&self, ts: &Timestamp) {
        *self.nanos.lock().unwrap() = ts.as_nanos();
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_nanos(*self.nanos.lock().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_listing_timestamp() {
        let ts = Timestamp::parse("1589469825.165538").unwrap();
        assert_eq!(ts.seconds(), 1589469825);
        assert_eq!(ts.fraction(), "165538");
        assert_eq!(ts.to_string(), "1589469825.165538");
    }

    #[test]
    fn epoch_origin() {
        let ts = Timestamp::parse("0").unwrap();
        assert_eq!(ts.seconds(), 0);
        assert_eq!(ts.fraction(), "");
        assert_eq!(ts.to_string(), "0");
    }

    #[test]
    fn trailing_zeros_preserved_but_equal() {
        let a = Timestamp::parse("12.500").unwrap();
        let b = Timestamp::parse("12.5").unwrap();
        assert_ne!(a.to_string(), b.to_string());
        assert_eq!(a.cmp(&b), Ordering::Equal);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "-1", "1.", ".5", "abc", "1.2.3", "1.1234567890123", "+5", "007", "1e9"] {
            assert!(Timestamp::parse(bad).is_err(), "{bad} should fail");
        }
        assert!(Timestamp::parse("1.123456789012").is_ok());
    }

    #[test]
    fn constructors_are_exact() {
        assert_eq!(Timestamp::from_micros(1_500_001).to_string(), "1.500001");
        assert_eq!(Timestamp::from_nanos(2_000_000_007).to_string(), "2.000000007");
        let t = Timestamp::parse("3.25").unwrap();
        assert_eq!(t.plus_nanos(750_000_000), Timestamp::from_secs(4));
        assert!((t.millis_since(&Timestamp::from_secs(3)) - 250.0).abs() < 1e-9);
    }

    #[test]
    fn serde_as_string() {
        let ts = Timestamp::parse("1589469979.861816").unwrap();
        let v = serde_json::to_string(&ts).unwrap();
        assert_eq!(v, "\"1589469979.861816\"");
        let back: Timestamp = serde_json::from_str(&v).unwrap();
        assert_eq!(back.to_string(), ts.to_string());
    }
}
