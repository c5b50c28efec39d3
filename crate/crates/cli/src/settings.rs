use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

#[derive(Debug)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CliError {}

impl From<vsensor::Error> for CliError {
    fn from(e: vsensor::Error) -> Self {
        CliError(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError(format!("I/O: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError(format!("JSON: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn fail<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError(msg.into()))
}

/// Flag values read from an optional JSON config file.
#[derive(Debug, Default)]
pub struct ConfigFile(Map<String, Value>);

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        match serde_json::from_str(&text)? {
            Value::Object(m) => Ok(Self(m)),
            _ => fail(format!("{}: config must be a JSON object", path.display())),
        }
    }

    /// Explicit flag, else config entry (`-` and `_` are interchangeable in
    /// keys), else the default.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        let alt = key.replace('-', "_");
        match self.0.get(key).or_else(|| self.0.get(&alt)) {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError(format!("config key `{key}`: {e}"))),
            None => Ok(default),
        }
    }

    pub fn flag(&self, flag: bool, key: &str) -> CliResult<bool> {
        self.pick(flag.then_some(true), key, false)
    }
}
