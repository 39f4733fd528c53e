//! Run manifests: a content digest of every input next to each output,
//! so equal digests imply byte-equal outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Digest over the command, the seed and every input byte.
    pub config_digest: String,
    pub tool_version: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    inputs: Vec<(String, Vec<u8>)>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder { command: command.to_string(), seed: None, inputs: vec![], outputs: vec![] }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn input_file(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path)?;
        self.inputs.push((path.display().to_string(), bytes));
        Ok(self)
    }

    /// Non-file inputs (inline flags) that must still be covered by the
    /// digest.
    pub fn input_value(&mut self, name: &str, value: &str) -> &mut Self {
        self.inputs.push((format!("flag:{name}"), value.as_bytes().to_vec()));
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn build(&self) -> RunManifest {
        let mut digest = Sha256::new();
        digest.update(self.command.as_bytes());
        digest.update([0]);
        if let Some(seed) = self.seed {
            digest.update(seed.to_le_bytes());
        }
        let mut inputs = Vec::new();
        for (path, bytes) in &self.inputs {
            digest.update(path.as_bytes());
            digest.update([0]);
            digest.update(bytes);
            digest.update([0]);
            inputs.push(FileDigest { path: path.clone(), sha256: hex(&Sha256::digest(bytes)) });
        }
        RunManifest {
            command: self.command.clone(),
            inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            seed: self.seed,
            config_digest: hex(&digest.finalize()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Writes `<first output>.manifest.json`.
    pub fn write(&self) -> Result<()> {
        let manifest = self.build();
        if let Some(first) = self.outputs.first() {
            let path = first.with_extension(format!(
                "{}manifest.json",
                first
                    .extension()
                    .map(|e| format!("{}.", e.to_string_lossy()))
                    .unwrap_or_default()
            ));
            std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_inputs_give_equal_digests() {
        let mut a = ManifestBuilder::new("induce");
        a.seed(7).input_value("layer", "S");
        let mut b = ManifestBuilder::new("induce");
        b.seed(7).input_value("layer", "S");
        assert_eq!(a.build().config_digest, b.build().config_digest);

        let mut c = ManifestBuilder::new("induce");
        c.seed(8).input_value("layer", "S");
        assert_ne!(a.build().config_digest, c.build().config_digest);
    }
}
