//! All-or-nothing writes of a batch of report files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Report files collected in memory and written together. Each file is first
/// written under a hidden temporary name and only renamed into place once
/// every temporary write succeeded.
#[derive(Debug, Default)]
pub struct StagedOutput {
    files: Vec<(String, Vec<u8>)>,
}

impl StagedOutput {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.tmp"));
            if let Err(e) = fs::write(&tmp, bytes) {
                let _ = fs::remove_file(&tmp);
                cleanup(staged.iter().map(|(t, _)| t));
                return Err(io(&tmp)(e));
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut done: Vec<PathBuf> = Vec::with_capacity(staged.len());
        for (i, (tmp, dest)) in staged.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, dest) {
                cleanup(done.iter());
                cleanup(staged[i..].iter().map(|(t, _)| t));
                return Err(io(dest)(e));
            }
            done.push(dest.clone());
        }
        Ok(done)
    }
}

fn cleanup<'a>(paths: impl Iterator<Item = &'a PathBuf>) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}
