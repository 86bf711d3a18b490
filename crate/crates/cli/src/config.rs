//! Config files are JSON objects; flags are merged on top before the value
//! is deserialized into the command's config type.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use zest_core::{Error, Result};

pub const SEED_ENV: &str = "ZEST_SEED";
pub const RUN_SCHEMA: u32 = 1;

pub fn load(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Config(format!("config {} is not a JSON object", path.display()))),
        Err(e) => Err(Error::Config(format!("config {}: {e}", path.display()))),
    }
}

pub fn set(map: &mut Map<String, Value>, key: &str, value: impl Serialize) {
    map.insert(
        key.to_string(),
        serde_json::to_value(value).expect("flag value serializes"),
    );
}

pub fn set_opt(map: &mut Map<String, Value>, key: &str, value: Option<impl Serialize>) {
    if let Some(v) = value {
        set(map, key, v);
    }
}

/// Flag, then config file, then the environment.
pub fn resolve_seed(map: &mut Map<String, Value>, flag: Option<u64>) -> Result<()> {
    if let Some(seed) = flag {
        set(map, "seed", seed);
        return Ok(());
    }
    if map.contains_key("seed") {
        return Ok(());
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        set(map, "seed", seed);
    }
    Ok(())
}

pub fn parse<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("config: {e}")))
}

pub fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Report wrapper for commands whose core result has no config echo of its own.
#[derive(Serialize)]
pub struct RunReport<'a, C: Serialize, R: Serialize> {
    pub schema: u32,
    pub engine_version: &'a str,
    pub command: &'a str,
    pub config: C,
    pub result: R,
}

impl<'a, C: Serialize, R: Serialize> RunReport<'a, C, R> {
    pub fn new(command: &'a str, config: C, result: R) -> Self {
        Self {
            schema: RUN_SCHEMA,
            engine_version: zest_core::ENGINE_VERSION,
            command,
            config,
            result,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// `NAME=PATH` or a bare `PATH` (which takes `default_name`).
pub fn named_path(raw: &str, default_name: &str) -> (String, PathBuf) {
    match raw.split_once('=') {
        Some((name, path)) if !name.is_empty() && !name.contains(['/', '\\']) => {
            (name.to_string(), PathBuf::from(path))
        }
        _ => (default_name.to_string(), PathBuf::from(raw)),
    }
}
