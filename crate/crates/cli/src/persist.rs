//! Run-directory layout and small file-writing helpers. Every experiment run
//! gets its own timestamped directory under `<out_dir>/<name>/` so repeated
//! invocations never clobber each other.

use serde::Serialize;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::CliError;

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("cannot {what} {}: {e}", path.display()))
}

/// Create `root/name/<utc timestamp>/` and return it. Nanosecond resolution
/// makes collisions unlikely; if one happens anyway (two runs inside the same
/// clock tick), a `-1`, `-2`, ... suffix resolves it.
pub fn timestamp_dir(root: &Path, name: &str) -> Result<PathBuf, CliError> {
    let base = root.join(name);
    fs::create_dir_all(&base).map_err(|e| io_err("create directory", &base, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.9fZ").to_string();
    let mut k = 0usize;
    loop {
        let candidate = if k == 0 {
            base.join(&stamp)
        } else {
            base.join(format!("{stamp}-{k}"))
        };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => k += 1,
            Err(e) => return Err(io_err("create directory", &candidate, e)),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err("write", path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err("write", path, e))
}

/// Append one CSV row, writing the header first if the file does not exist.
pub fn append_line(path: &Path, header: &str, line: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err("create directory", parent, e))?;
    }
    let fresh = !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err("open", path, e))?;
    if fresh {
        writeln!(file, "{header}").map_err(|e| io_err("write", path, e))?;
    }
    writeln!(file, "{line}").map_err(|e| io_err("write", path, e))?;
    Ok(())
}
