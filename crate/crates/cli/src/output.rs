//! Output files are assembled in memory and committed together: each is
//! written to a temporary name and renamed into place, and if any step fails
//! the files already committed are removed again.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_with<F>(&mut self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> snails::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Internal(format!("serialising {name}: {e}")))?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|f| f.0.as_str())
    }

    /// Write everything into `dir`, all or nothing.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Internal(format!("creating {}: {e}", dir.display())))?;
        let mut done: Vec<PathBuf> = Vec::new();
        for (name, bytes) in &self.files {
            let target = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            let res = write_file(&tmp, bytes).and_then(|_| fs::rename(&tmp, &target));
            if let Err(e) = res {
                let _ = fs::remove_file(&tmp);
                for p in &done {
                    let _ = fs::remove_file(p);
                }
                return Err(CliError::Internal(format!("writing {}: {e}", target.display())));
            }
            done.push(target);
        }
        Ok(done)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commits_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::new();
        out.add("a.csv", b"x\n1\n".to_vec());
        out.add("b.txt", b"hi".to_vec());
        let written = out.commit(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), b"x\n1\n");
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn failure_removes_committed_files() {
        let dir = tempfile::tempdir().unwrap();
        // a directory squatting on the second name makes the rename fail
        fs::create_dir(dir.path().join("b.txt")).unwrap();
        fs::write(dir.path().join("b.txt").join("keep"), b"").unwrap();
        let mut out = OutputSet::new();
        out.add("a.csv", b"1".to_vec());
        out.add("b.txt", b"2".to_vec());
        assert!(out.commit(dir.path()).is_err());
        assert!(!dir.path().join("a.csv").exists());
        assert!(!dir.path().join(".b.txt.tmp").exists());
    }
}
