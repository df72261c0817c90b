//! Flat `key = value` configuration files. The CLI reads one of these when
//! `--config` is given; explicit flags win over file values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> std::result::Result<Config, String> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(format!("line {}: expected 'key = value'", lineno + 1))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text).map_err(|reason| Error::format(path, reason))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("config key '{key}' has invalid value '{raw}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = Config::parse("# a comment\nnz = 32\n\nepochs=50\n  seed =  7 \n").unwrap();
        assert_eq!(cfg.get("nz"), Some("32"));
        assert_eq!(cfg.get("epochs"), Some("50"));
        assert_eq!(cfg.get_parsed::<u64>("seed").unwrap(), Some(7));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn rejects_garbage_lines_and_values() {
        assert!(Config::parse("this is not a pair\n").is_err());
        let cfg = Config::parse("epochs = soon\n").unwrap();
        assert!(cfg.get_parsed::<usize>("epochs").is_err());
    }
}
