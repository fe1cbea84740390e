use std::path::{Path, PathBuf};

use serde::Serialize;

/// Isolated per-iteration directory. Iteration `-1` is the baseline
/// evaluation that precedes the loop.
#[derive(Debug, Serialize)]
pub struct Workspace {
    pub run_id: String,
    pub iteration: i64,
    pub root_path: PathBuf,
    pub created_at: u64,
    #[serde(skip)]
    pub(crate) exec_count: u32,
}

impl Workspace {
    pub fn dir_name(iteration: i64) -> String {
        if iteration < 0 {
            "iter-base".to_string()
        } else {
            format!("iter-{iteration:03}")
        }
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root_path.join(rel)
    }

    pub fn catalog_dir(&self) -> PathBuf {
        self.root_path.join("catalog")
    }

    /// Lists every file below the workspace root (relative paths, sorted).
    pub fn list_files(&self) -> std::io::Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        walk(&self.root_path, &self.root_path, &mut out)?;
        out.sort();
        Ok(out)
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let ty = entry.file_type()?;
        let path = entry.path();
        if ty.is_dir() {
            walk(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
        }
    }
    Ok(())
}
