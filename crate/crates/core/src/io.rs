//! Artifact persistence helpers shared by every file format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(format!("{} not found", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))
}

/// Writes `bytes` to `path`, creating parent directories.
///
/// An existing file with identical contents is left alone; a differing one
/// is only replaced when `force` is set.
pub fn write_artifact(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    if let Ok(existing) = fs::read(path) {
        if existing == bytes {
            return Ok(());
        }
        if !force {
            return Err(Error::Overwrite(path.to_path_buf()));
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overwrite_rules() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.bin");
        write_artifact(&p, b"one", false).unwrap();
        write_artifact(&p, b"one", false).unwrap();
        assert!(matches!(
            write_artifact(&p, b"two", false),
            Err(Error::Overwrite(_))
        ));
        write_artifact(&p, b"two", true).unwrap();
        assert_eq!(read_bytes(&p).unwrap(), b"two");
        assert!(matches!(
            read_bytes(&dir.path().join("nope")),
            Err(Error::Missing(_))
        ));
    }
}
