//! Flat `key=value` text files: one pair per line, `#` comments, blank lines
//! ignored. Used for generator specs, experiment configs and run manifests.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = KvMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, found `{line}`"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            map.set(k, v.trim());
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Inserts or overwrites, keeping first-insertion order.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        let i = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(i).1)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    /// Parsed value for a key that must be present.
    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key).ok_or_else(|| Error::MissingKey(key.to_string()))?;
        raw.parse()
            .map_err(|e| Error::InvalidParameter(format!("key `{key}`: cannot parse `{raw}`: {e}")))
    }

    /// Comma-separated list for a key that must be present.
    pub fn require_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let raw = self.raw(key).ok_or_else(|| Error::MissingKey(key.to_string()))?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e| {
                    Error::InvalidParameter(format!("key `{key}`: cannot parse `{s}`: {e}"))
                })
            })
            .collect()
    }

    /// Copies every pair of `other` over this map.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

/// Comma-joined list in a form `require_list` reads back.
pub fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let m = KvMap::parse("# comment\nmu=2.0\n\n sigma = 0.3 \nlist=1, 2,3\n").unwrap();
        assert_eq!(m.require::<f64>("mu").unwrap(), 2.0);
        assert_eq!(m.require::<f64>("sigma").unwrap(), 0.3);
        assert_eq!(m.require_list::<u32>("list").unwrap(), vec![1, 2, 3]);
        match m.require::<f64>("slope") {
            Err(Error::MissingKey(k)) => assert_eq!(k, "slope"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(KvMap::parse("novalue\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn text_round_trip() {
        let mut m = KvMap::new();
        m.set("b", 1);
        m.set("a", "x");
        m.set("b", 2);
        assert_eq!(m.to_text(), "b=2\na=x\n");
        assert_eq!(KvMap::parse(&m.to_text()).unwrap(), m);
    }
}
