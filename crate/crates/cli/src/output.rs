use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use broomscan_core::Provenance;

use crate::{CliError, CliResult};

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn ensure_parent(path: &Path) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    ensure_parent(path)?;
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Write a table to `path` (or stdout for `None`), provenance line first.
/// `body` gets the writer positioned after the header.
pub fn table<F>(path: Option<&Path>, provenance: &Provenance, body: F) -> CliResult
where
    F: FnOnce(&mut dyn Write) -> broomscan_core::Result<()>,
{
    match path {
        Some(p) => {
            let mut w = create(p)?;
            provenance.write_header(&mut w)?;
            body(&mut w)?;
            w.flush().map_err(|e| io_err(p, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            provenance.write_header(&mut w)?;
            body(&mut w)?;
            w.flush().map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// `324+574` becomes `324-574` so stage tags can go into file names.
pub fn file_tag(tag: &str) -> String {
    tag.replace('+', "-")
}

pub fn text(w: &mut dyn Write, s: &str) -> broomscan_core::Result<()> {
    w.write_all(s.as_bytes())
        .map_err(|e| broomscan_core::Error::Format(format!("write failed: {e}")))
}
