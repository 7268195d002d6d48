//! `key = value` config files and flag/file/default resolution.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

/// Bad flags, config keys or parameter values. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps a parameter validation failure to a usage error.
pub fn check(r: cpwatch_core::Result<()>) -> Result<()> {
    r.map_err(|e| usage(e.to_string()))
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected `key = value`", i + 1)))?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(usage(format!("config line {}: empty key", i + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(usage(format!("config line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self {
            values,
            used: RefCell::default(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text)
            }
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.values.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v)
    }

    /// Flag if given, else the config file value, else nothing.
    pub fn opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let from_file = match self.raw(key) {
            Some(v) => Some(
                v.parse::<T>()
                    .map_err(|e| usage(format!("config key `{key}`: invalid value `{v}`: {e}")))?,
            ),
            None => None,
        };
        Ok(flag.or(from_file))
    }

    pub fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn list<T>(&self, key: &str, flag: Option<Vec<T>>) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let from_file = match self.raw(key) {
            Some(v) => Some(
                v.split(',')
                    .map(|s| s.trim().parse::<T>())
                    .collect::<std::result::Result<Vec<T>, _>>()
                    .map_err(|e| usage(format!("config key `{key}`: invalid list `{v}`: {e}")))?,
            ),
            None => None,
        };
        Ok(flag.or(from_file))
    }

    /// Rejects config keys the subcommand never asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(usage(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}
