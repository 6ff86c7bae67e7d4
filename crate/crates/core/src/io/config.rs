use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `key = value` lines; `#` starts a comment. Later keys override earlier
/// ones. Every key must be consumed by the caller, see [`Self::finish`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValueConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse_line(idx + 1, format!("expected `key = value`, got `{line}`"))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse_line(idx + 1, "empty key"));
            }
            entries.insert(k.to_string(), (v.trim().to_string(), idx + 1));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                let msg = format!("invalid value `{v}` for `{key}`");
                if line > 0 {
                    Error::parse_line(line, msg)
                } else {
                    Error::invalid(msg)
                }
            }),
        }
    }

    /// Fails if any key was never taken.
    pub fn finish(&self) -> Result<()> {
        match self.entries.iter().next() {
            Some((k, (_, line))) => Err(Error::invalid(format!(
                "unknown configuration key `{k}`{}",
                if *line > 0 {
                    format!(" (line {line})")
                } else {
                    String::new()
                }
            ))),
            None => Ok(()),
        }
    }

    /// Keys for one consumer: `scope.key` and plain `key` entries are kept
    /// (scoped ones win), entries for other scopes are dropped.
    pub fn scoped(&self, scope: &str) -> Self {
        let prefix = format!("{scope}.");
        let mut entries = BTreeMap::new();
        for (k, v) in &self.entries {
            if !k.contains('.') {
                entries.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        for (k, v) in &self.entries {
            if let Some(rest) = k.strip_prefix(&prefix) {
                entries.insert(rest.to_string(), v.clone());
            }
        }
        Self { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_take_finish() {
        let mut c =
            KeyValueConfig::parse("# run\nepochs = 3\n lr=0.5 # fast\n\nstream = joint\n").unwrap();
        assert_eq!(c.take::<usize>("epochs").unwrap(), Some(3));
        assert_eq!(c.take::<f64>("lr").unwrap(), Some(0.5));
        assert_eq!(c.take::<usize>("missing").unwrap(), None);
        assert!(c.finish().is_err());
        assert_eq!(
            c.take::<String>("stream").unwrap().as_deref(),
            Some("joint")
        );
        c.finish().unwrap();
        assert!(KeyValueConfig::parse("novalue\n").is_err());
        let scoped = KeyValueConfig::parse("seed = 1\ntrain.seed = 2\nsynth.noise = 0.1\n")
            .unwrap()
            .scoped("train");
        let mut s2 = scoped.clone();
        assert_eq!(s2.take::<u64>("seed").unwrap(), Some(2));
        s2.finish().unwrap();
        let mut bad = KeyValueConfig::parse("epochs = many").unwrap();
        assert!(bad.take::<usize>("epochs").is_err());
    }
}
