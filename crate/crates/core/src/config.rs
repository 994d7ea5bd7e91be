//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValueConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected key = value, got {s:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config {
                    line,
                    message: "empty key".into(),
                });
            }
            if entries.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key {k:?}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config {
                line: *line,
                message: format!("{key}: {e}"),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim().parse().map_err(|e| Error::Config {
                    line: *line,
                    message: format!("{key}: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Errors on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config {
                    line: *line,
                    message: format!("unknown key {k:?}"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_lists_and_comments() {
        let c = KeyValueConfig::parse("# comment\nseed = 7\n\nplanes = -1, 0.5 ,2\nname=a=b\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(c.get_list::<f64>("planes").unwrap(), Some(vec![-1.0, 0.5, 2.0]));
        assert_eq!(c.raw("name"), Some("a=b"));
        assert_eq!(c.get_or("missing", 3usize).unwrap(), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = KeyValueConfig::parse("a = 1\nnonsense\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = KeyValueConfig::parse("a = 1\na = 2\n").unwrap_err().to_string();
        assert!(e.contains("duplicate"), "{e}");
        let c = KeyValueConfig::parse("\nseed = x\n").unwrap();
        assert!(c.get::<u64>("seed").unwrap_err().to_string().contains("line 2"));
        assert!(c.reject_unknown(&["epochs"]).is_err());
    }
}
