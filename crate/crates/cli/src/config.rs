//! Plain `key = value` configuration files and their merge with flags.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::Result;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::UsageError;

/// Keys may be written with `-` or `_`; they are stored with `-`, the
/// spelling of the matching long flag.
pub fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key = value, got {raw:?}", i + 1)))?;
        let key = normalize_key(k);
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", i + 1)));
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(UsageError(format!("config line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(map)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
        .map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))
        .map_err(Into::into)
}

/// Resolves parameters from flags, then the config file, then defaults, and
/// records every resolved value for the run manifest.
pub struct Resolver {
    config: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
    resolved: RefCell<Map<String, Value>>,
}

impl Resolver {
    pub fn new(config: BTreeMap<String, String>) -> Self {
        Self {
            config,
            used: RefCell::new(BTreeSet::new()),
            resolved: RefCell::new(Map::new()),
        }
    }

    fn lookup<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        match self.config.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| UsageError(format!("config key {key:?}: cannot parse {raw:?}: {e}")).into()),
        }
    }

    fn record<T: Serialize>(&self, key: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.resolved.borrow_mut().insert(key.to_string(), v);
    }

    pub fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let cfg = self.lookup(key)?;
        let v = flag.or(cfg).unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    /// Like [`get`](Self::get) without a default.
    pub fn get_opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let cfg = self.lookup(key)?;
        let v = flag.or(cfg);
        self.record(key, &v);
        Ok(v)
    }

    /// A value that must come from a flag or the config file.
    pub fn require<T>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        self.get_opt(key, flag)?
            .ok_or_else(|| UsageError(format!("missing required parameter --{key}")))
            .map_err(Into::into)
    }

    /// Boolean switches: a set flag wins, otherwise the config decides.
    pub fn switch(&self, key: &str, flag: bool) -> Result<bool> {
        let cfg: Option<bool> = self.lookup(key)?;
        let v = flag || cfg.unwrap_or(false);
        self.record(key, &v);
        Ok(v)
    }

    /// Fails on config keys that no parameter of the command consumed.
    pub fn finish(self) -> Result<Map<String, Value>> {
        let used = self.used.into_inner();
        let unknown: Vec<&String> = self.config.keys().filter(|k| !used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(UsageError(format!("unknown config keys for this command: {unknown:?}")).into());
        }
        Ok(self.resolved.into_inner())
    }
}

/// Parses `a,b,c` into three values.
pub fn triple<T>(text: &str) -> Result<[T; 3]>
where
    T: FromStr + Copy,
    T::Err: Display,
{
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(UsageError(format!("expected three comma-separated values, got {text:?}")).into());
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|e| UsageError(format!("bad value {p:?} in {text:?}: {e}")))?,
        );
    }
    Ok([out[0], out[1], out[2]])
}
