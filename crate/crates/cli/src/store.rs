//! Artifact directory: atomic writes, upstream lookups and manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Seeds;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the same directory, then renames, so
/// a file under its final name is always complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .tempfile_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// An upstream artifact that has not been produced yet.
#[derive(Debug, thiserror::Error)]
#[error("missing artifact {artifact}: run `{producer}` first")]
pub struct MissingArtifact {
    pub artifact: String,
    pub producer: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub versions: BTreeMap<String, String>,
    pub config_hash: String,
    pub seeds: Seeds,
    /// sha256 per input, keyed by role or artifact name.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Store {
    root: PathBuf,
    manifest: Manifest,
}

impl Store {
    pub fn new(root: &Path, command: &str, config_hash: String, seeds: Seeds) -> Self {
        let versions = BTreeMap::from([
            ("sepsis-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("sepsis-core".to_string(), sepsis_core::VERSION.to_string()),
        ]);
        Self {
            root: root.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                versions,
                config_hash,
                seeds,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Reads an artifact produced by `producer`.
    pub fn read(&mut self, name: &str, producer: &'static str) -> Result<Vec<u8>> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(MissingArtifact { artifact: name.to_string(), producer }.into());
        }
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        self.manifest.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Records the digest of an external input.
    pub fn note_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.manifest.inputs.insert(role.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes)?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut bytes = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut bytes, r)?;
            bytes.push(b'\n');
        }
        self.write(name, &bytes)
    }

    /// Buffers whatever `f` writes and stores it atomically.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> sepsis_core::Result<()>,
    {
        let mut bytes = Vec::new();
        f(&mut bytes).with_context(|| format!("serializing {name}"))?;
        self.write(name, &bytes)
    }

    /// Replaces both digest tables, for manifests that summarise other runs.
    pub fn set_digests(&mut self, inputs: BTreeMap<String, String>, outputs: BTreeMap<String, String>) {
        self.manifest.inputs = inputs;
        self.manifest.outputs = outputs;
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Writes `manifests/<command>.json` and returns the manifest.
    pub fn finish(self) -> Result<Manifest> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        let name = format!("manifests/{}.json", self.manifest.command);
        write_atomic(&self.root.join(name), &bytes)?;
        Ok(self.manifest)
    }
}

pub fn parse_jsonl<T: serde::de::DeserializeOwned>(bytes: &[u8], name: &str) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).with_context(|| format!("{name} is not UTF-8"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{name}:{}", i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeds() -> Seeds {
        Seeds {
            master: None,
            autoencoder: 1,
            clustering: 2,
            forest: 3,
            subgroup_classifier: 4,
            state_classifier: 5,
            synth: 6,
        }
    }

    #[test]
    fn atomic_write_leaves_no_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.txt");
        write_atomic(&path, b"hello").unwrap();
        write_atomic(&path, b"again").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"again");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("b.txt")]);
    }

    #[test]
    fn missing_upstream_names_its_producer() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::new(dir.path(), "cluster", "h".into(), seeds());
        let err = s.read("dense.csv", "vectors").unwrap_err();
        assert!(err.to_string().contains("run `vectors` first"));
        assert!(err.downcast_ref::<MissingArtifact>().is_some());
    }

    #[test]
    fn manifest_tracks_digests() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::new(dir.path(), "x", "h".into(), seeds());
        s.write("out.txt", b"abc").unwrap();
        s.read("out.txt", "x").unwrap();
        let m = s.finish().unwrap();
        let abc = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
        assert_eq!(m.outputs["out.txt"], abc);
        assert_eq!(m.inputs["out.txt"], abc);
        assert!(dir.path().join("manifests/x.json").is_file());
    }
}
