use std::io::Write;
#[cfg(unix)]
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use crate::error::{Result, RuntimeError};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| RuntimeError::io(dir, e))?;
    tmp.write_all(bytes)
        .map_err(|e| RuntimeError::io(path, e))?;
    #[cfg(unix)]
    tmp.as_file()
        .set_permissions(std::fs::Permissions::from_mode(0o644))
        .map_err(|e| RuntimeError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| RuntimeError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| RuntimeError::io(path, e.error))?;
    Ok(())
}
