//! Staged output: files go to a hidden directory inside the target and are
//! renamed into place only once the whole command has succeeded.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub struct Outputs {
    target: PathBuf,
    staging: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Outputs {
    pub fn stage(target: &Path) -> io::Result<Self> {
        fs::create_dir_all(target)?;
        let staging = target.join(format!(".staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            hashes: BTreeMap::new(),
        })
    }

    /// Writes `name` through `fill` and records its SHA-256.
    pub fn write<F>(&mut self, name: &str, fill: F) -> io::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    {
        let path = self.staging.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        fill(&mut w)?;
        w.flush()?;
        drop(w);
        let digest = Sha256::digest(fs::read(&path)?);
        self.hashes.insert(name.to_string(), hex::encode(digest));
        Ok(())
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    /// Adds `manifest.json` and moves every staged file into the target.
    pub fn commit(self, manifest: &serde_json::Value) -> io::Result<()> {
        let text = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
        fs::write(self.staging.join("manifest.json"), text + "\n")?;
        let moved = self
            .hashes
            .keys()
            .map(String::as_str)
            .chain(["manifest.json"])
            .try_for_each(|name| fs::rename(self.staging.join(name), self.target.join(name)));
        let cleanup = fs::remove_dir_all(&self.staging);
        moved.and(cleanup)
    }

    pub fn discard(self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}
