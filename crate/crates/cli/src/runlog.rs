//! Append-only JSON-lines run log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::error::CliError;

pub struct RunLog {
    file: File,
    timestamps: bool,
    started: Instant,
}

impl RunLog {
    /// Opens `<dir>/log.jsonl` for appending.
    pub fn open(dir: &Path, timestamps: bool) -> Result<Self, CliError> {
        let path = dir.join("log.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::runtime(format!("cannot open {}: {e}", path.display())))?;
        Ok(Self { file, timestamps, started: Instant::now() })
    }

    /// Writes `{"event": event, ...fields}`; wall-clock fields only when timestamps are on.
    pub fn event(&mut self, event: &str, fields: Value) -> Result<(), CliError> {
        let mut obj = Map::new();
        obj.insert("event".into(), json!(event));
        if let Value::Object(f) = fields {
            obj.extend(f);
        }
        if self.timestamps {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
            obj.insert("unix_ms".into(), json!(now as u64));
            obj.insert("elapsed_ms".into(), json!(self.started.elapsed().as_millis() as u64));
        }
        let mut line = Value::Object(obj).to_string();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| CliError::runtime(format!("cannot write run log: {e}")))
    }
}

/// Build and host facts that do not vary between reruns on one machine.
pub fn fingerprint() -> Value {
    json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "threads": rayon::current_num_threads(),
        "debug_build": cfg!(debug_assertions),
    })
}
