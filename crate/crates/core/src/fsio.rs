//! Crash-safe file writes shared by every artifact emitter.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

pub(crate) fn path_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(suffix);
    PathBuf::from(os)
}

/// Writes via a temporary sibling and renames into place, so readers never
/// observe a half-written artifact. If the final rename fails, the bytes
/// are left beside the target with a `.partial` suffix instead of silently
/// vanishing.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path_with_suffix(path, ".tmp");
    if let Err(e) = fs::write(&tmp, bytes) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::rename(&tmp, path_with_suffix(path, ".partial"));
            Err(e.into())
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}
