//! Append-only JSON Lines logs. The first line of every file is a schema
//! header; later runs append records after checking it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::exit::UsageError;

pub const SCHEMA: &str = "headfit.log";
pub const SCHEMA_VERSION: u32 = 1;

pub struct JsonlLog {
    path: PathBuf,
    file: File,
}

impl JsonlLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let existing = path.exists() && std::fs::metadata(&path)?.len() > 0;
        if existing {
            check_header(&path)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening log {}", path.display()))?;
        if !existing {
            writeln!(file, "{}", json!({"schema": SCHEMA, "version": SCHEMA_VERSION}))?;
        }
        Ok(JsonlLog { path, file })
    }

    /// Appends `{"event": kind, ...fields}`.
    pub fn record(&mut self, kind: &str, fields: impl Serialize) -> Result<()> {
        let mut obj = serde_json::Map::new();
        obj.insert("event".into(), Value::String(kind.into()));
        match serde_json::to_value(fields)? {
            Value::Object(m) => obj.extend(m),
            Value::Null => {}
            other => {
                obj.insert("value".into(), other);
            }
        }
        writeln!(self.file, "{}", Value::Object(obj)).with_context(|| format!("writing {}", self.path.display()))?;
        Ok(())
    }
}

fn check_header(path: &Path) -> Result<()> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let header: Value = serde_json::from_str(first.trim())
        .map_err(|_| UsageError(format!("{}: first line is not a log header", path.display())))?;
    if header["schema"] != SCHEMA || header["version"] != SCHEMA_VERSION {
        return Err(UsageError(format!(
            "{}: log schema {} v{} does not match {SCHEMA} v{SCHEMA_VERSION}",
            path.display(),
            header["schema"],
            header["version"]
        ))
        .into());
    }
    Ok(())
}
