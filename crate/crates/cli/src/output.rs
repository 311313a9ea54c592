//! Artifact writing confined to one directory, rolled back unless committed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
    created_root: bool,
    committed: bool,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        let created_root = !root.exists();
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            created_root,
            committed: false,
        })
    }

    /// An output that is a single file; its parent becomes the root.
    pub fn for_file(file: &Path) -> Result<(Self, String)> {
        let name = file
            .file_name()
            .and_then(|n| n.to_str())
            .with_context(|| format!("invalid output path {}", file.display()))?
            .to_string();
        let parent = file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Ok((Self::create(parent)?, name))
    }

    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let rel = Path::new(name);
        if rel.components().count() != 1 || rel.is_absolute() {
            bail!("artifact name '{name}' must be a plain file name");
        }
        Ok(self.root.join(rel))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name)?;
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = tcbm_core::json::to_canonical(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Records a file written by other code, so that abort removes it too.
    pub fn track(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.path(name)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_root {
            let _ = fs::remove_dir(&self.root);
        }
    }
}
