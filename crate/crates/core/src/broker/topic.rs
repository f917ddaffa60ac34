use std::fmt;
use std::str::FromStr;

use thiserror::Error;

const LEVEL_SEPARATOR: char = '/';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
}

/// A concrete topic name; never contains wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic {
    name: String,
}

impl Topic {
    pub fn parse(s: &str) -> Result<Self, TopicError> {
        let ok = !s.is_empty()
            && s.split(LEVEL_SEPARATOR)
                .all(|seg| !seg.is_empty() && !seg.contains(['+', '#']));
        if ok {
            Ok(Self { name: s.to_string() })
        } else {
            Err(TopicError::InvalidTopic(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.name
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.name.split(LEVEL_SEPARATOR)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for Topic {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum FilterSegment {
    Level(String),
    /// `+`
    Any,
    /// `#`, only as the final segment
    MultipleAny,
}

/// A subscription pattern using MQTT 3.1.1 wildcard rules.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicFilter {
    levels: Vec<FilterSegment>,
}

impl TopicFilter {
    pub fn parse(s: &str) -> Result<Self, TopicError> {
        let bad = || TopicError::InvalidFilter(s.to_string());
        if s.is_empty() {
            return Err(bad());
        }
        let parts: Vec<&str> = s.split(LEVEL_SEPARATOR).collect();
        let mut levels = Vec::with_capacity(parts.len());
        for (i, seg) in parts.iter().enumerate() {
            let level = match *seg {
                "" => return Err(bad()),
                "+" => FilterSegment::Any,
                "#" if i + 1 == parts.len() => FilterSegment::MultipleAny,
                "#" => return Err(bad()),
                lit if lit.contains(['+', '#']) => return Err(bad()),
                lit => FilterSegment::Level(lit.to_string()),
            };
            levels.push(level);
        }
        Ok(Self { levels })
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        let mut names = topic.segments();
        for level in &self.levels {
            match level {
                FilterSegment::MultipleAny => return true,
                FilterSegment::Any => {
                    if names.next().is_none() {
                        return false;
                    }
                }
                FilterSegment::Level(lit) => match names.next() {
                    Some(n) if n == lit => {}
                    _ => return false,
                },
            }
        }
        names.next().is_none()
    }

    /// Number of literal (non-wildcard) segments.
    pub fn literal_count(&self) -> usize {
        self.levels.iter().filter(|l| matches!(l, FilterSegment::Level(_))).count()
    }

    pub fn has_wildcards(&self) -> bool {
        self.literal_count() != self.levels.len()
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .levels
            .iter()
            .map(|l| match l {
                FilterSegment::Any => "+",
                FilterSegment::MultipleAny => "#",
                FilterSegment::Level(s) => s.as_str(),
            })
            .collect();
        f.write_str(&parts.join("/"))
    }
}

impl FromStr for TopicFilter {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Topic {
        Topic::parse(s).unwrap()
    }

    fn f(s: &str) -> TopicFilter {
        TopicFilter::parse(s).unwrap()
    }

    #[test]
    fn single_level_wildcard() {
        assert!(f("+/co2").matches(&t("room1/co2")));
        assert!(!f("+/co2").matches(&t("a/b/co2")));
        assert!(!f("+/co2").matches(&t("co2")));
    }

    #[test]
    fn multi_level_wildcard() {
        assert!(f("#").matches(&t("anything/at/all")));
        assert!(f("csn/#").matches(&t("csn/a")));
        assert!(f("csn/#").matches(&t("csn/a/b")));
        assert!(f("csn/#").matches(&t("csn")));
        assert!(!f("csn/#").matches(&t("csnx/a")));
    }

    #[test]
    fn invalid_forms() {
        for bad in ["", "a//b", "a/#/b", "a/b#", "a+/b", "/a"] {
            assert!(TopicFilter::parse(bad).is_err(), "{bad}");
        }
        for bad in ["", "a/+", "a/#", "a//b", "a/"] {
            assert!(Topic::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn literal_counts() {
        assert_eq!(f("csn/+/tele/SENSOR").literal_count(), 3);
        assert_eq!(f("#").literal_count(), 0);
        assert_eq!(f("ttn/+/up").to_string(), "ttn/+/up");
    }
}
