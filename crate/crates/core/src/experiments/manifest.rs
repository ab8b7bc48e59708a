use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

impl RunManifest {
    /// Comment lines for hash, seed and version, then `path sha256 bytes`.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# config_sha256 {}\n# seed {}\n# version {}\n",
            self.config_hash, self.seed, self.version
        );
        for f in &self.files {
            s.push_str(&format!("{} {} {}\n", f.path, f.sha256, f.bytes));
        }
        s
    }
}

/// Writes output files into one directory and records their checksums.
#[derive(Debug)]
pub struct OutputSink {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutputSink {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Renders with `f` into memory, then writes.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes `manifest.txt` and returns the manifest.
    pub fn finish(self, config_hash: String, seed: u64) -> Result<RunManifest> {
        let manifest = RunManifest {
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            files: self.entries,
        };
        fs::write(self.dir.join(MANIFEST_NAME), manifest.to_text())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = OutputSink::create(dir.path()).unwrap();
        sink.write("a.csv", b"x\n").unwrap();
        let m = sink.finish("00".into(), 7).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(text, m.to_text());
        assert!(text.contains(&format!("a.csv {} 2\n", sha256_hex(b"x\n"))));
        assert!(text.starts_with("# config_sha256 00\n# seed 7\n"));
    }
}
