//! JSON config files under command-line flags, and the exit-code mapping.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use fieldrec::error::{Error, ErrorKind};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A library error, with the stage that raised it.
    Core { stage: &'static str, source: Error },
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_DATA,
            CliError::Core { source, .. } => match source.kind() {
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core { stage, source } => write!(f, "{stage}: {source}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for fieldrec::error::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { stage, source })
    }
}

fn object(value: Value, what: &str) -> Result<Map<String, Value>, CliError> {
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(CliError::Usage(format!("{what} must be a JSON object"))),
    }
}

/// Options from `config` (if any) with every flag that was given on the
/// command line taking precedence. Keys in the file use the long flag names.
pub fn merge<T: Serialize + DeserializeOwned + Default>(flags: &T, config: Option<&Path>) -> Result<T, CliError> {
    let to_value = |t: &T| serde_json::to_value(t).map_err(|e| CliError::Usage(e.to_string()));
    let Some(path) = config else {
        return serde_json::from_value(to_value(flags)?).map_err(|e| CliError::Usage(e.to_string()));
    };
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let what = format!("config {}", path.display());
    let parsed: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{what}: {e}")))?;
    let mut merged = object(parsed, &what)?;
    let known = object(to_value(&T::default())?, "options")?;
    if let Some(key) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Usage(format!("{what}: unknown option '{key}'")));
    }
    for (key, value) in object(to_value(flags)?, "options")? {
        if !value.is_null() {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

/// Fails early on inputs that do not exist and outputs whose directory does
/// not.
pub fn validate_paths(inputs: &[&Option<PathBuf>], outputs: &[&Option<PathBuf>]) -> Result<(), CliError> {
    for path in inputs.iter().filter_map(|p| p.as_ref()) {
        if !path.is_file() {
            return Err(CliError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            });
        }
    }
    for path in outputs.iter().filter_map(|p| p.as_ref()) {
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !dir.is_dir() {
            return Err(CliError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
            });
        }
    }
    Ok(())
}
