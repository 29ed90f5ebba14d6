//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are free-form
//! dotted names (`audio.frame_len`); each consumer pulls the keys it knows and
//! falls back to its defaults for the rest.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if entries
                .insert(key.to_string(), (value.trim().to_string(), line_no))
                .is_some()
            {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries
            .insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    /// Parsed value for `key`, or `default` when the key is absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some((value, line)) => value.parse().map_err(|_| Error::Config {
                line: *line,
                message: format!("cannot parse `{value}` for `{key}`"),
            }),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("# header\n\naudio.bands = 40\n  train.lr=0.001  \n").unwrap();
        assert_eq!(kv.get_or("audio.bands", 0usize).unwrap(), 40);
        assert_eq!(kv.get_or("train.lr", 0.0f64).unwrap(), 0.001);
        assert_eq!(kv.get_or("missing", 7u32).unwrap(), 7);
    }

    #[test]
    fn rejects_bad_lines() {
        let err = KeyValues::parse("a = 1\nnot a pair\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        let kv = KeyValues::parse("n = abc").unwrap();
        assert!(kv.get_or("n", 1usize).is_err());
    }
}
