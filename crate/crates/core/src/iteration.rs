use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Which pass of each enclosing loop produced something, outermost first.
///
/// Rendered as `outer=3.inner=1`; the empty vector renders as `root`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IterationVector(pub Vec<(String, usize)>);

impl IterationVector {
    pub fn root() -> Self {
        IterationVector(Vec::new())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, loop_id: &str) -> Option<usize> {
        self.0.iter().find(|(l, _)| l == loop_id).map(|(_, i)| *i)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|(_, i)| *i).collect()
    }

    pub fn starts_with(&self, prefix: &IterationVector) -> bool {
        self.0.len() >= prefix.0.len() && self.0[..prefix.0.len()] == prefix.0[..]
    }

    pub fn push(&mut self, loop_id: impl Into<String>, index: usize) {
        self.0.push((loop_id.into(), index));
    }
}

impl fmt::Display for IterationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("root");
        }
        for (i, (l, idx)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{l}={idx}")?;
        }
        Ok(())
    }
}

impl FromStr for IterationVector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "root" {
            return Ok(IterationVector::root());
        }
        let mut out = Vec::new();
        for part in s.split('.') {
            let (l, idx) = part
                .split_once('=')
                .ok_or_else(|| format!("bad iteration vector segment '{part}'"))?;
            if l.is_empty() {
                return Err(format!("bad iteration vector segment '{part}'"));
            }
            let idx = idx
                .parse::<usize>()
                .map_err(|_| format!("bad iteration index in '{part}'"))?;
            out.push((l.to_string(), idx));
        }
        Ok(IterationVector(out))
    }
}

impl Serialize for IterationVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for IterationVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_parses() {
        let mut v = IterationVector::root();
        assert_eq!(v.to_string(), "root");
        v.push("loopA", 3);
        v.push("loopB", 1);
        assert_eq!(v.to_string(), "loopA=3.loopB=1");
        assert_eq!("loopA=3.loopB=1".parse::<IterationVector>().unwrap(), v);
        assert_eq!("root".parse::<IterationVector>().unwrap(), IterationVector::root());
        assert!("loopA".parse::<IterationVector>().is_err());
    }
}
