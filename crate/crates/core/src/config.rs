//! `key = value` configuration files with `#` comments.
//!
//! Every lookup records the value it resolved to, including defaults, so
//! a run can write out a snapshot that reproduces it. Keys that were
//! supplied but never looked up are reported by [`KvConfig::finish`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    origin: String,
}

#[derive(Debug, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, Entry>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_named(text, "<config>")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_named(&text, &path.display().to_string())
    }

    fn parse_named(text: &str, source: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = format!("{source}:{}", n + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("{origin}: expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config(format!("{origin}: empty key")));
            }
            if let Some(prev) = cfg.entries.get(key) {
                return Err(Error::config(format!(
                    "{origin}: duplicate key `{key}` (first set at {})",
                    prev.origin
                )));
            }
            cfg.entries.insert(
                key.to_string(),
                Entry {
                    value: value.trim().to_string(),
                    origin,
                },
            );
        }
        Ok(cfg)
    }

    /// Sets or overrides a key; overrides win over file values.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                origin: "override".to_string(),
            },
        );
    }

    /// Applies a `key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{pair}` is not `key=value`")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::config(format!("override `{pair}` has an empty key")));
        }
        self.set(k, v.trim());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    fn parse_value<T: FromStr>(&self, key: &str, entry: &Entry) -> Result<T>
    where
        T::Err: Display,
    {
        entry.value.parse().map_err(|e| {
            Error::config(format!(
                "{}: cannot parse `{key}` = `{}`: {e}",
                entry.origin, entry.value
            ))
        })
    }

    pub fn get<T: FromStr + Display>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(entry) => {
                let v: T = self.parse_value(key, entry)?;
                self.record(key, entry.value.clone());
                Ok(Some(v))
            }
        }
    }

    pub fn get_or<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.get(key)? {
            Some(v) => Ok(v),
            None => {
                self.record(key, default.to_string());
                Ok(default)
            }
        }
    }

    pub fn require<T: FromStr + Display>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    /// Raw string value, recorded like any other lookup.
    pub fn get_str(&self, key: &str) -> Option<String> {
        let entry = self.entries.get(key)?;
        self.record(key, entry.value.clone());
        Some(entry.value.clone())
    }

    pub fn get_str_or(&self, key: &str, default: &str) -> String {
        self.get_str(key).unwrap_or_else(|| {
            self.record(key, default.to_string());
            default.to_string()
        })
    }

    /// Comma-separated list.
    pub fn get_list_or<T: FromStr + Display + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let Some(raw) = self.get_str(key) else {
            let text = default.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
            self.record(key, text);
            return Ok(default.to_vec());
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::config(format!("cannot parse element `{s}` of `{key}`: {e}")))
            })
            .collect()
    }

    /// Records a derived value in the snapshot without a lookup.
    pub fn note(&self, key: &str, value: impl Display) {
        self.record(key, value.to_string());
    }

    /// Keys supplied but never looked up.
    pub fn unknown_keys(&self) -> Vec<String> {
        let resolved = self.resolved.borrow();
        self.entries
            .keys()
            .filter(|k| !resolved.contains_key(*k))
            .cloned()
            .collect()
    }

    pub fn finish(&self) -> Result<()> {
        let unknown = self.unknown_keys();
        if unknown.is_empty() {
            Ok(())
        } else {
            let list = unknown
                .iter()
                .map(|k| format!("`{k}` ({})", self.entries[k].origin))
                .collect::<Vec<_>>()
                .join(", ");
            Err(Error::config(format!("unknown key(s): {list}")))
        }
    }

    /// Every resolved value, sorted by key, in the same file format.
    pub fn snapshot(&self) -> String {
        self.resolved
            .borrow()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let cfg = KvConfig::parse("# header\n width = 48 # px\n\nname=bulk\n").unwrap();
        assert_eq!(cfg.require::<usize>("width").unwrap(), 48);
        assert_eq!(cfg.get_str("name").as_deref(), Some("bulk"));
        cfg.finish().unwrap();
    }

    #[test]
    fn missing_required_key_is_named() {
        let cfg = KvConfig::parse("").unwrap();
        let err = cfg.require::<usize>("width").unwrap_err().to_string();
        assert!(err.contains("`width`"), "{err}");
    }

    #[test]
    fn unknown_keys_are_errors() {
        let cfg = KvConfig::parse("widht = 3\n").unwrap();
        let _ = cfg.get_or("width", 48usize).unwrap();
        let err = cfg.finish().unwrap_err().to_string();
        assert!(err.contains("widht"), "{err}");
    }

    #[test]
    fn overrides_win_and_defaults_are_snapshotted() {
        let mut cfg = KvConfig::parse("a = 1\n").unwrap();
        cfg.set_pair("a=2").unwrap();
        assert_eq!(cfg.get_or("a", 0u32).unwrap(), 2);
        assert_eq!(cfg.get_or("b", 0.5f64).unwrap(), 0.5);
        assert_eq!(cfg.snapshot(), "a = 2\nb = 0.5\n");
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        assert!(KvConfig::parse("a = 1\na = 2\n").is_err());
        assert!(KvConfig::parse("just words\n").is_err());
    }

    #[test]
    fn lists() {
        let cfg = KvConfig::parse("k = 3, 4,5\n").unwrap();
        assert_eq!(cfg.get_list_or::<usize>("k", &[]).unwrap(), vec![3, 4, 5]);
        assert_eq!(cfg.get_list_or::<f64>("m", &[1.0, 1.5]).unwrap(), vec![1.0, 1.5]);
    }
}
