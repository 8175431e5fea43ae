use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::CliError;

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes `path` through a temporary file in the same directory, so readers
/// never observe a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    let mut w = BufWriter::new(tmp);
    fill(&mut w)?;
    let tmp = w.into_inner().map_err(|e| CliError::at(path, e.error()))?;
    publish_mode(tmp.as_file()).map_err(|e| CliError::at(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::at(path, e))?;
    tmp.persist(path).map_err(|e| CliError::at(path, e.error))?;
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::at(path, e))
}

/// Temporary files are created owner-only; outputs should not be.
#[cfg(unix)]
fn publish_mode(file: &std::fs::File) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    file.set_permissions(std::fs::Permissions::from_mode(0o644))
}

#[cfg(not(unix))]
fn publish_mode(_: &std::fs::File) -> std::io::Result<()> {
    Ok(())
}
