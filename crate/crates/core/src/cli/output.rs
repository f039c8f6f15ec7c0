//! All-or-nothing output: files are staged in a hidden directory inside the
//! output directory and renamed into place only once every file is written.

use super::CliError;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    /// Top-level entries, in insertion order.
    fn roots(&self) -> Vec<String> {
        let mut roots: Vec<String> = Vec::new();
        for (name, _) in &self.files {
            let root = name.split('/').next().unwrap_or(name).to_string();
            if !roots.contains(&root) {
                roots.push(root);
            }
        }
        roots
    }

    /// Writes everything, returning the final paths of the top-level entries.
    pub fn commit(self, out: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        let roots = self.roots();
        for root in &roots {
            let target = out.join(root);
            if target.is_dir() {
                return Err(CliError::Config(format!(
                    "{} already exists; choose an empty output directory",
                    target.display()
                )));
            }
        }
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(out)
            .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        for (name, bytes) in &self.files {
            let path = staging.path().join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
            }
            fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        let mut written = Vec::new();
        for root in roots {
            let target = out.join(&root);
            fs::rename(staging.path().join(&root), &target)
                .map_err(|e| CliError::Io(format!("{}: {e}", target.display())))?;
            written.push(target);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_leaves_no_staging() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = OutputSet::new();
        set.add("a.csv", "x\n");
        set.add("sub/b.bin", vec![1u8, 2]);
        set.add("sub/c.bin", vec![3u8]);
        let written = set.commit(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(fs::read(dir.path().join("sub/c.bin")).unwrap(), vec![3]);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
    }

    #[test]
    fn existing_directory_is_refused_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        let mut set = OutputSet::new();
        set.add("a.csv", "x\n");
        set.add("sub/b.bin", vec![1u8]);
        assert!(set.commit(dir.path()).is_err());
        assert!(!dir.path().join("a.csv").exists());
    }

    #[test]
    fn files_are_replaced() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "old").unwrap();
        let mut set = OutputSet::new();
        set.add("a.csv", "new");
        set.commit(dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap(), "new");
    }
}
