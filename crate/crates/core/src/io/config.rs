use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{invalid, Result};

/// Flat `key = value` configuration. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid!("config line {}: expected key=value, got '{raw}'", i + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(invalid!("config line {}: empty key", i + 1));
        }
        entries.insert(key, v.trim().to_string());
    }
    Ok(ConfigMap { entries })
}

impl ConfigMap {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Parses `key` when present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| invalid!("config key {key}: cannot parse '{v}'")))
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_and_comments() {
        let c = parse_config("# header\nepochs = 30\n\nlr=1e-3 # inline\nfield_reduction = 4\n").unwrap();
        assert_eq!(c.parsed::<usize>("epochs").unwrap(), Some(30));
        assert_eq!(c.parsed::<f64>("lr").unwrap(), Some(1e-3));
        assert_eq!(c.get("field-reduction"), Some("4"));
        assert_eq!(c.parsed::<usize>("missing").unwrap(), None);
        assert!(c.parsed::<usize>("lr").is_err());
        assert!(parse_config("novalue\n").is_err());
    }
}
