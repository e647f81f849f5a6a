//! Merges a JSON config file with command-line flags; flags win.
//!
//! A key is looked up in the command's own section first
//! (`{"train": {"epochs": 50}}`), then at the top level.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{usage, CliResult};

pub struct Settings {
    section: Map<String, Value>,
    root: Map<String, Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>, command: &str) -> CliResult<Self> {
        let root = match path {
            None => Map::new(),
            Some(p) => match vocspec::dataset::io::read_json::<Value>(p)? {
                Value::Object(m) => m,
                _ => return Err(usage(format!("{}: config must be a JSON object", p.display()))),
            },
        };
        let section = match root.get(command) {
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(usage(format!("config section `{command}` must be an object"))),
            None => Map::new(),
        };
        Ok(Settings { section, root })
    }

    fn lookup<T: DeserializeOwned>(&self, key: &str) -> CliResult<Option<T>> {
        let Some(v) = self.section.get(key).or_else(|| self.root.get(key)) else {
            return Ok(None);
        };
        serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| usage(format!("config key `{key}`: {e}")))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(key),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    pub fn required<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> CliResult<T> {
        self.get(key, flag)?
            .ok_or_else(|| usage(format!("missing `--{}` (or `{key}` in the config file)", key.replace('_', "-"))))
    }

    pub fn path(&self, key: &str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        self.required(key, flag)
    }
}
