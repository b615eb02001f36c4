//! Layered settings: command-line flags override `key = value` config files,
//! which override built-in defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// keys are kebab-case flag names.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(CliError::Config(format!("config line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("config line {}: duplicate key {key:?}", n + 1)));
        }
    }
    Ok(out)
}

pub fn parse_list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| CliError::Config(format!("{key}: cannot parse {s:?}: {e}")))
        })
        .collect()
}

/// Resolves settings for one command and records the resolved values, which
/// the run manifest echoes.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self {
            file,
            ..Self::default()
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Ok(Self::new(parse_config(&text)?))
            }
        }
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("config key {key}: cannot parse {s:?}: {e}"))),
        }
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let file = self.from_file(key)?;
        let value = flag.or(file).unwrap_or(default);
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn get_list<T: FromStr + Display>(&mut self, key: &str, flag: Option<&str>, default: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let text = flag
            .map(str::to_string)
            .or_else(|| self.file.get(key).cloned())
            .unwrap_or_else(|| default.to_string());
        let values: Vec<T> = parse_list(key, &text)?;
        let echo: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.resolved.insert(key.to_string(), echo.join(","));
        Ok(values)
    }

    /// Records a value that has no config-file form, such as an input path.
    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Fails on config-file keys the command never asked for.
    pub fn finish(&self) -> Result<BTreeMap<String, String>> {
        if let Some(k) = self.file.keys().find(|k| !self.used.contains(*k)) {
            return Err(CliError::Config(format!("unknown config key {k:?}")));
        }
        Ok(self.resolved.clone())
    }
}
