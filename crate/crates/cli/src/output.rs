//! Staged output files: everything is written next to its destination and
//! renamed into place only once the whole command has succeeded.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf, String)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: &Path, contents: &[u8]) -> Result<()> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut tmp = NamedTempFile::new_in(&dir).with_context(|| format!("staging {}", path.display()))?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
        }
        tmp.write_all(contents)?;
        tmp.flush()?;
        self.files.push((tmp, path.to_path_buf(), sha256_hex(contents)));
        Ok(())
    }

    /// `(path, sha256)` of every staged file.
    pub fn digests(&self) -> Vec<(String, String)> {
        self.files.iter().map(|(_, p, d)| (p.display().to_string(), d.clone())).collect()
    }

    /// Moves every file into place; on failure, files already moved are
    /// removed again and the rest are discarded.
    pub fn commit(self) -> Result<()> {
        let mut done: Vec<PathBuf> = Vec::new();
        for (tmp, path, _) in self.files {
            if let Err(e) = tmp.persist(&path) {
                for p in &done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e.error).with_context(|| format!("writing {}", path.display()));
            }
            done.push(path);
        }
        Ok(())
    }
}
