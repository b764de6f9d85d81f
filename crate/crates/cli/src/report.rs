use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

/// Envelope shared by every JSON report: the command, a full echo of its
/// configuration, and the result.
#[derive(Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub config: &'a C,
    pub result: &'a R,
}

pub fn to_json<C: Serialize, R: Serialize>(command: &str, config: &C, result: &R) -> Result<String> {
    let report = Report { schema_version: SCHEMA_VERSION, command, config, result };
    let mut s = serde_json::to_string_pretty(&report)?;
    s.push('\n');
    Ok(s)
}

/// Writes `contents` to a temp file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_report<C: Serialize, R: Serialize>(path: &Path, command: &str, config: &C, result: &R) -> Result<()> {
    write_atomic(path, to_json(command, config, result)?.as_bytes())
}
