use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// An output directory that remembers the checksum of every file written.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    checksums: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            checksums: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.checksums.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Registers a file some other routine already wrote into the directory.
    pub fn adopt(&mut self, name: &str) -> std::io::Result<()> {
        let bytes = std::fs::read(self.dir.join(name))?;
        self.checksums.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn checksums(&self) -> &BTreeMap<String, String> {
        &self.checksums
    }

    /// Writes `manifest.json` (keys sorted) listing every other output.
    pub fn finish(self, mut manifest: serde_json::Map<String, serde_json::Value>) -> std::io::Result<PathBuf> {
        let outputs: serde_json::Map<String, serde_json::Value> = self
            .checksums
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!({ "sha256": v })))
            .collect();
        manifest.insert("outputs".into(), serde_json::Value::Object(outputs));
        let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(manifest)).expect("json");
        text.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
