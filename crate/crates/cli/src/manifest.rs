//! Content-addressed run folders.
//!
//! Each run writes into `<base>/<command>-<hash12>/`, where the hash is the
//! SHA-256 of the command, seed, canonical config, command arguments and the
//! bytes of every input file. The folder holds a `manifest.toml` with the
//! same fields, so identical invocations land in the same place and any
//! change lands elsewhere.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Default, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub hash: String,
    pub args: BTreeMap<String, String>,
    /// Input role → SHA-256 of its bytes (directories hash their sorted files).
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub config: String,
}

pub struct RunBuilder {
    manifest: Manifest,
}

impl RunBuilder {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Self {
            manifest: Manifest {
                command: command.to_string(),
                seed,
                config,
                ..Manifest::default()
            },
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.manifest.args.insert(key.to_string(), value.to_string());
        self
    }

    /// Records an input under `role`; only its content enters the hash.
    pub fn input(mut self, role: &str, path: &Path) -> Result<Self, CliError> {
        let digest = hash_path(path)?;
        self.manifest.inputs.insert(role.to_string(), digest);
        Ok(self)
    }

    /// Fixes the hash and creates the run folder.
    pub fn create(mut self, base: &Path) -> Result<Run, CliError> {
        let m = &self.manifest;
        let mut h = Sha256::new();
        for part in [m.command.as_str(), &m.seed.to_string(), m.config.as_str()] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        for (k, v) in m.args.iter().chain(&m.inputs) {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        let hash = hex::encode(h.finalize());
        let dir = base.join(format!("{}-{}", m.command, &hash[..12]));
        self.manifest.hash = hash;
        fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Run {
            dir,
            manifest: self.manifest,
        })
    }
}

pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.outputs.sort();
        let text = toml::to_string(&self.manifest).expect("manifest serializes");
        let path = self.dir.join("manifest.toml");
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(self.dir)
    }
}

fn hash_path(path: &Path) -> Result<String, CliError> {
    let io = |e: std::io::Error| CliError::Validation(format!("input `{}`: {e}", path.display()));
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.toml"))
            .collect();
        entries.sort();
        for p in entries {
            h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            h.update([0]);
            h.update(fs::read(&p).map_err(io)?);
        }
    } else {
        h.update(fs::read(path).map_err(io)?);
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let name = |b: RunBuilder| b.create(dir.path()).unwrap().dir;
        let a = name(RunBuilder::new("train", 1, "x".into()));
        assert_eq!(a, name(RunBuilder::new("train", 1, "x".into())));
        assert_ne!(a, name(RunBuilder::new("train", 2, "x".into())));
        assert_ne!(a, name(RunBuilder::new("train", 1, "y".into())));
        assert_ne!(a, name(RunBuilder::new("eval", 1, "x".into())));
        assert_ne!(a, name(RunBuilder::new("train", 1, "x".into()).arg("rank", 4)));
        assert!(a.file_name().unwrap().to_str().unwrap().starts_with("train-"));
        assert_eq!(a.file_name().unwrap().len(), "train-".len() + 12);
    }

    #[test]
    fn input_contents_change_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("in.csv");
        fs::write(&f, "a\n1\n").unwrap();
        let one = RunBuilder::new("eval", 0, String::new()).input("data", &f).unwrap().create(dir.path()).unwrap();
        fs::write(&f, "a\n2\n").unwrap();
        let two = RunBuilder::new("eval", 0, String::new()).input("data", &f).unwrap().create(dir.path()).unwrap();
        assert_ne!(one.dir, two.dir);
    }
}
