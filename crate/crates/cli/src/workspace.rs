//! The output directory: an exclusive lock plus writes that leave
//! unchanged files untouched.

use std::fs::{self, OpenOptions};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use skynow::{Error, Result};

pub const LOCK_FILE: &str = ".skynow.lock";

pub struct Workspace {
    root: PathBuf,
    lock: Option<PathBuf>,
}

impl Workspace {
    /// Creates `root` if needed and takes the lock. Fails when another run
    /// holds it.
    pub fn lock(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(Workspace {
                root: root.to_path_buf(),
                lock: Some(lock),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is locked by another run (delete {} if it is stale)",
                root.display(),
                lock.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `bytes` to `name` unless the file already holds exactly them.
    /// Returns whether the file changed.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<bool> {
        write_if_changed(&self.path(name), bytes)
    }

    pub fn write_with(
        &self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<bool> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<bool> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write(name, &buf)
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        if let Some(lock) = self.lock.take() {
            let _ = fs::remove_file(lock);
        }
    }
}

pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if let Ok(mut f) = fs::File::open(path) {
        let mut old = Vec::with_capacity(bytes.len());
        if f.read_to_end(&mut old).is_ok() && old == bytes {
            return Ok(false);
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(true)
}

/// Opens an input artifact, naming the step that produces it when absent.
pub fn open_input(path: &Path, producer: &str) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Data(format!(
            "missing input {} (run `skynow {producer}` first)",
            path.display()
        )),
        _ => e.into(),
    })
}
